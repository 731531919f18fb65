import pytest

from dnanas.config import ConfigError, RunConfig, load_config
from dnanas.space import table1_config


def test_defaults_roundtrip_and_hash_stable():
    cfg = RunConfig()
    again = RunConfig.from_dict(cfg.to_dict())
    assert again == cfg and again.hash() == cfg.hash()
    assert RunConfig.from_dict({"seed": 1}).hash() != cfg.hash()


def test_spos_epochs_default_matches_distill_total():
    cfg = RunConfig.from_dict({"distill": {"epochs": 7}})
    assert cfg.spos_epochs == 7 * len(cfg.space.blocks)
    assert RunConfig.from_dict({"spos": {"epochs": 5}}).spos_epochs == 5


@pytest.mark.parametrize("bad", [
    {"nope": {}},
    {"data": {"nope": 1}},
    {"data": {"size": 20}},
    {"distill": {"strategy": "s3"}},
    {"bench": {"eval_split": "train"}},
    {"teacher": {"epochs": -1}},
    {"space": {"blocks": []}},
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_load_config_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(RunConfig().canonical())
    assert load_config(path) == RunConfig()
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "bad.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")


def test_table1_space_in_config():
    cfg = RunConfig.from_dict({"space": table1_config().to_dict(), "data": {"size": 112, "class_count": 1000}})
    assert cfg.space == table1_config()
