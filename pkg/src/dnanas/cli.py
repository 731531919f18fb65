"""Command line: one subcommand per pipeline stage, all sharing a config file and run directory."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .data import load_splits
from .distill import BlockDistiller, SPOSSupernet
from .engine.checkpoint import atomic_write
from .pipeline import (MissingArtifactError, RunDir, cost_table_for, distill_blocks, distill_progressive,
                       load_rankings, rank_benchmark, rank_blocks, save_rankings, train_spos, train_teacher,
                       write_benchmark)
from .bench import StandaloneClassifier
from .search import Constraint, pareto_sweep, traversal_search
from .space import ArchEncoding, drop_rate, space_size, table1_config
from .teacher import FeatureCache, TeacherClassifier, extract_features

log = logging.getLogger("dnanas")

EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _config(args) -> RunConfig:
    if args.preset == "table1":
        return RunConfig.from_dict({"space": table1_config(args.ops).to_dict(),
                                    "data": {"size": 112, "class_count": 1000}})
    return load_config(args.config) if args.config else RunConfig()


def _run(args) -> RunDir:
    cfg = _config(args)
    return RunDir(cfg, args.runs_root, args.run_dir)


def _csv(rows, header) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


# -- subcommands -------------------------------------------------------------

def cmd_config(args) -> int:
    cfg = _config(args)
    text = cfg.canonical()
    if args.out:
        atomic_write(Path(args.out), text.encode())
    print(text, end="")
    print(f"# config hash {cfg.hash()}")
    return 0


def cmd_teacher_train(args) -> int:
    t0 = time.time()
    run = _run(args)
    teacher = train_teacher(run.cfg, load_splits(run.cfg.data))
    teacher.save(run.teacher)
    losses = run.path / "teacher.loss.csv"
    atomic_write(losses, _csv(teacher.loss_curve_, ["epoch", "step", "loss"]))
    run.write_manifest(run.teacher, "teacher-train", [], [run.teacher, losses], t0)
    print(f"teacher val accuracy {teacher.val_accuracy_:.4f} -> {run.teacher}")
    return 0


def cmd_features_extract(args) -> int:
    t0 = time.time()
    run = _run(args)
    teacher = TeacherClassifier.load(run.require(run.teacher, "teacher-train"))
    cache = extract_features(teacher, load_splits(run.cfg.data))
    cache.save(run.features)
    run.write_manifest(run.features, "features-extract", [run.teacher], [run.features], t0)
    for split in cache.splits:
        shapes = ", ".join(str(tuple(cache.get(split, i).shape)) for i in range(cache.n_blocks + 1))
        print(f"{split}: {shapes}")
    return 0


def _save_block(run: RunDir, d: BlockDistiller, strategy: str, t0: float) -> None:
    path = run.block(d.block, strategy)
    d.save(path)
    atomic_write(run.block_losses(d.block, strategy), d.loss_csv().encode())
    run.write_manifest(path, "supernet-train", [run.features], [path, run.block_losses(d.block, strategy)], t0)
    means = d.epoch_means()
    if means:
        print(f"{strategy} block {d.block}: first-epoch loss {means[0]:.5f}, final-epoch loss {means[-1]:.5f}")


def cmd_supernet_train(args) -> int:
    t0 = time.time()
    run = _run(args)
    n = len(run.cfg.space.blocks)
    if args.all_blocks == (args.block is not None):
        raise ConfigError("pass exactly one of --block I or --all-blocks")
    if args.block is not None and not 0 <= args.block < n:
        raise ConfigError(f"--block must be in [0, {n - 1}]")
    strategy = args.strategy or run.cfg.distill.strategy
    cache = FeatureCache.load(run.require(run.features, "features-extract"))
    if strategy == "dna":
        blocks = list(range(n)) if args.all_blocks else [args.block]
        workers = args.workers if args.workers is not None else len(blocks)
        for d in distill_blocks(run.cfg, cache, blocks, workers, run.features):
            _save_block(run, d, strategy, t0)
    else:
        upto = n - 1 if args.all_blocks else args.block
        for d in distill_progressive(run.cfg, cache, strategy, upto):
            _save_block(run, d, strategy, t0)
    return 0


def cmd_spos_train(args) -> int:
    t0 = time.time()
    run = _run(args)
    spos = train_spos(run.cfg, load_splits(run.cfg.data))
    spos.save(run.spos)
    losses = run.path / "spos.loss.csv"
    atomic_write(losses, _csv(spos.loss_curve_, ["epoch", "step", "loss"]))
    run.write_manifest(run.spos, "spos-train", [], [run.spos, losses], t0)
    print(f"spos: {spos.n_steps_} steps, final loss {spos.loss_curve_[-1][2]:.5f}" if spos.loss_curve_ else "spos: 0 steps")
    return 0


def cmd_cost_table(args) -> int:
    t0 = time.time()
    run = _run(args)
    table = cost_table_for(run)
    atomic_write(run.cost_table, table.to_csv().encode())
    run.write_manifest(run.cost_table, "cost-table", [], [run.cost_table], t0)
    print(f"{len(table)} entries (madds = multiply-adds) -> {run.cost_table}")
    return 0


def cmd_evaluate(args) -> int:
    t0 = time.time()
    run = _run(args)
    strategy = args.strategy
    cache = FeatureCache.load(run.require(run.features, "features-extract"))
    paths = [run.require(run.block(i, strategy), f"supernet-train --block {i} --strategy {strategy}")
             for i in range(len(run.cfg.space.blocks))]
    distillers = [BlockDistiller.load(p) for p in paths]
    rankings = rank_blocks(run.cfg, distillers, cache, cost_table_for(run))
    out = save_rankings(run, rankings, strategy)
    run.write_manifest(out, "evaluate", [run.features, *paths], [out], t0)
    for rk in rankings:
        best = rk[0]
        print(f"block {rk.block}: {len(rk)} paths, best cell {best.cell} path {'-'.join(map(str, best.path))} "
              f"rel_l1 {best.loss:.5f}")
    return 0


def _bound(text: str) -> int | None:
    if text.lower() in ("none", "inf"):
        return None
    value = int(float(text))
    if value <= 0:
        raise ConfigError(f"bound must be positive, got {text}")
    return value


def cmd_search(args) -> int:
    t0 = time.time()
    run = _run(args)
    rankings = load_rankings(run, args.strategy)
    bound = _bound(args.bound) if args.bound is not None else None
    result = traversal_search(rankings, cost_table_for(run), Constraint(args.metric, bound))
    out = run.search(args.metric, bound)
    atomic_write(out, result.to_json(args.metric).encode())
    run.write_manifest(out, "search", [run.rankings(args.strategy)], [out], t0)
    print(f"{result.arch.key()} loss {result.loss:.6f} params {result.cost.params} madds {result.cost.madds} "
          f"visited {result.visited} -> {out}")
    return 0


def cmd_pareto(args) -> int:
    t0 = time.time()
    run = _run(args)
    rankings = load_rankings(run, args.strategy)
    bounds = [float("inf") if _bound(b) is None else _bound(b) for b in args.bounds]
    results = pareto_sweep(rankings, cost_table_for(run), bounds, args.metric)
    rows = [[("none" if b == float("inf") else int(b)), repr(r.loss), r.cost.params, r.cost.madds, r.visited, r.arch.key()]
            for b, r in zip(bounds, results)]
    out = run.pareto(args.metric)
    atomic_write(out, _csv(rows, ["bound", "loss", "params", "madds", "visited", "arch"]))
    run.write_manifest(out, "pareto", [run.rankings(args.strategy)], [out], t0)
    for row in rows:
        print(*row, sep="\t")
    return 0


def cmd_retrain(args) -> int:
    t0 = time.time()
    run = _run(args)
    arch_file = Path(args.arch)
    if not arch_file.exists():
        raise MissingArtifactError(arch_file, "search")
    arch = ArchEncoding.from_dict(json.loads(arch_file.read_text()))
    b = run.cfg.bench
    splits = load_splits(run.cfg.data)
    clf = StandaloneClassifier(run.cfg.space, arch, args.epochs if args.epochs is not None else b.epochs,
                               b.batch_size, b.lr, b.lr_decay, b.seed)
    held = splits[b.eval_split]
    clf.fit(splits["train"].images, splits["train"].labels, eval_set=(held.images, held.labels))
    result = {"arch": arch.key(), "eval_split": b.eval_split, "best_accuracy": clf.best_accuracy_,
              "final_accuracy": clf.eval_curve_[-1], "eval_curve": clf.eval_curve_}
    out = run.path / f"retrain_{arch_file.stem}.json"
    atomic_write(out, (json.dumps(result, indent=2, sort_keys=True) + "\n").encode())
    run.write_manifest(out, "retrain", [], [out], t0)
    print(f"{arch.key()} best {b.eval_split} accuracy {clf.best_accuracy_:.4f}, final {clf.eval_curve_[-1]:.4f}")
    return 0


def cmd_rank_report(args) -> int:
    t0 = time.time()
    run = _run(args)
    rankings = load_rankings(run)
    spos = SPOSSupernet.load(run.require(run.spos, "spos-train"))
    trials = rank_benchmark(run.cfg, rankings, spos, load_splits(run.cfg.data))
    write_benchmark(run, trials)
    run.write_manifest(run.report, "rank-report", [run.rankings(), run.spos], [run.trials, run.summary, run.report], t0)
    print(run.report.read_text(), end="")
    return 0


def cmd_space_size(args) -> int:
    cfg = _config(args)
    n = space_size(cfg.space)
    print(n)
    print(f"{n:.3e}")
    return 0


def cmd_drop_rate(args) -> int:
    cfg = _config(args)
    if not 0 <= args.block < len(cfg.space.blocks):
        raise ConfigError(f"--block must be in [0, {len(cfg.space.blocks) - 1}]")
    r = drop_rate(cfg.space, args.block)
    print(r)
    print(f"{float(r):.6e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (default: built-in synthetic desk config)")
    common.add_argument("--preset", choices=["desk", "table1"], help="use a built-in configuration instead of --config")
    common.add_argument("--ops", type=int, default=6, help="candidate ops for --preset table1")
    common.add_argument("--runs-root", default="runs", help="parent of per-config run directories")
    common.add_argument("--run-dir", help="explicit run directory (overrides the config-hash location)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="dnanas", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(fn=fn)
        return p

    p = add("config", cmd_config, "print the resolved configuration and its hash")
    p.add_argument("--out", help="also write the YAML here")
    add("teacher-train", cmd_teacher_train, "train the teacher classifier")
    add("features-extract", cmd_features_extract, "cache teacher block features for every split")
    p = add("supernet-train", cmd_supernet_train, "distill supernet blocks from cached features")
    p.add_argument("--block", type=int)
    p.add_argument("--all-blocks", action="store_true", help="train every block (in parallel for dna)")
    p.add_argument("--strategy", choices=["dna", "s1", "s2"])
    p.add_argument("--workers", type=int, help="processes for --all-blocks with dna (default: one per block)")
    add("spos-train", cmd_spos_train, "train the single-path one-shot baseline")
    add("cost-table", cmd_cost_table, "write the parameter / multiply-add lookup table")
    p = add("evaluate", cmd_evaluate, "rate every path of every block on the val split")
    p.add_argument("--strategy", choices=["dna", "s1", "s2"], default="dna")
    p = add("search", cmd_search, "exact constrained search over the rankings")
    p.add_argument("--metric", choices=["params", "madds"], default="madds")
    p.add_argument("--bound", help="cost bound (omit or 'none' for unconstrained)")
    p.add_argument("--strategy", choices=["dna", "s1", "s2"], default="dna")
    p = add("pareto", cmd_pareto, "search under each of several ascending bounds")
    p.add_argument("--metric", choices=["params", "madds"], default="madds")
    p.add_argument("--bounds", nargs="+", required=True)
    p.add_argument("--strategy", choices=["dna", "s1", "s2"], default="dna")
    p = add("retrain", cmd_retrain, "train an architecture descriptor from scratch")
    p.add_argument("--arch", required=True, help="architecture JSON written by search")
    p.add_argument("--epochs", type=int)
    add("rank-report", cmd_rank_report, "retrain sampled architectures and correlate with predictions")
    add("space-size", cmd_space_size, "print the number of architectures in the space")
    p = add("drop-rate", cmd_drop_rate, "print one block's share of the full space")
    p.add_argument("--block", type=int, required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s %(message)s", force=True)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
