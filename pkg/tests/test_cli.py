import json

import pytest
import yaml

from dnanas.cli import main
from dnanas.config import RunConfig
from dnanas.pipeline import RunDir, file_digest


@pytest.fixture
def tiny_cfg(tmp_path, tiny_space):
    cfg = {
        "space": tiny_space.to_dict(),
        "data": {"class_count": 3, "size": 8, "images_per_class": 10, "test_per_class": 4, "noise": 0.3},
        "teacher": {"epochs": 1, "batch_size": 8, "floor": 0.0},
        "distill": {"epochs": 1, "batch_size": 8},
        "spos": {"epochs": 1, "batch_size": 8, "calibration_batches": 1},
        "bench": {"k": 3, "epochs": 1, "batch_size": 8},
        "evaluate": {"batch_size": 8},
    }
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def _run(cfg, root, *args):
    return main([*args, "--config", str(cfg), "--runs-root", str(root)])


def test_space_size_table1(capsys):
    assert main(["space-size", "--preset", "table1"]) == 0
    lines = capsys.readouterr().out.split()
    assert lines == ["195898498887057408", "1.959e+17"]


def test_drop_rate(capsys):
    assert main(["drop-rate", "--preset", "table1", "--block", "5"]) == 0
    assert capsys.readouterr().out.split()[0] == "1/32649749814509568"
    assert main(["drop-rate", "--preset", "table1", "--block", "9"]) == 2


def test_unknown_flag_exit_2(capsys):
    assert main(["space-size", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err
    assert main([]) == 2


def test_bad_config_exit_2(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("data: {size: 3}\n")
    assert main(["space-size", "--config", str(bad)]) == 2


def test_search_before_evaluate_exit_3(tmp_path, tiny_cfg, capsys):
    assert _run(tiny_cfg, tmp_path / "runs", "search", "--metric", "params") == 3
    err = capsys.readouterr().err
    assert "rankings.csv" in err and "dnanas evaluate" in err


def test_features_before_teacher_exit_3(tmp_path, tiny_cfg, capsys):
    assert _run(tiny_cfg, tmp_path / "runs", "features-extract") == 3
    assert "teacher-train" in capsys.readouterr().err


def test_full_pipeline(tmp_path, tiny_cfg, capsys):
    root = tmp_path / "runs"
    steps = [
        ["teacher-train"], ["features-extract"], ["supernet-train", "--block", "0"], ["supernet-train", "--block", "1"],
        ["cost-table"], ["evaluate"], ["search", "--metric", "params"], ["pareto", "--metric", "madds",
                                                                          "--bounds", "1e9", "none"],
        ["spos-train"], ["rank-report"], ["supernet-train", "--all-blocks", "--strategy", "s2"],
        ["evaluate", "--strategy", "s2"],
    ]
    for s in steps:
        assert _run(tiny_cfg, root, *s) == 0, s
    run = RunDir(RunConfig.from_dict(yaml.safe_load(tiny_cfg.read_text())), root)
    for p in [run.teacher, run.block(0), run.block(1), run.rankings(), run.rankings("s2"), run.cost_table,
              run.search("params", None), run.pareto("madds"), run.trials, run.summary, run.report, run.spos,
              run.block_losses(0), run.path / "teacher.loss.csv", run.path / "spos.loss.csv"]:
        assert p.exists(), p
        assert p.with_name(p.name + ".manifest.json").exists(), p
    assert (run.features / "manifest.json").exists()
    manifest = json.loads(run.rankings().with_name("rankings.csv.manifest.json").read_text())
    assert manifest["subcommand"] == "evaluate" and manifest["config_hash"] == run.hash
    assert set(manifest["inputs"]) == {"features", "supernet/dna/block0.bin", "supernet/dna/block1.bin"}
    result = json.loads(run.search("params", None).read_text())
    arch_file = tmp_path / "arch.json"
    arch_file.write_text(json.dumps(result))
    assert _run(tiny_cfg, root, "retrain", "--arch", str(arch_file), "--epochs", "1") == 0

    # idempotent: rerunning a stage on unchanged inputs rewrites identical bytes
    before = file_digest(run.rankings())
    assert _run(tiny_cfg, root, "evaluate") == 0
    assert file_digest(run.rankings()) == before
    capsys.readouterr()


def test_supernet_train_needs_one_selector(tmp_path, tiny_cfg):
    assert _run(tiny_cfg, tmp_path / "runs", "supernet-train") == 2


def test_retrain_missing_arch_exit_3(tmp_path, tiny_cfg):
    assert _run(tiny_cfg, tmp_path / "runs", "retrain", "--arch", str(tmp_path / "nope.json")) == 3


def test_config_prints_hash(tmp_path, capsys):
    out = tmp_path / "c.yaml"
    assert main(["config", "--out", str(out)]) == 0
    assert RunConfig.from_dict(yaml.safe_load(out.read_text())) == RunConfig()
    assert RunConfig().hash() in capsys.readouterr().out
