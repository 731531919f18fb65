"""Run directory layout and the pipeline stages the command line drives."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__
from .bench import (RankTrial, correlation_summary, dna_score, report_text, retrain_standalone, summary_csv, trial_seed,
                    trials_to_csv)
from .config import RunConfig
from .cost import CostTable, build_cost_table
from .data import Dataset
from .distill import BlockDistiller, SPOSSupernet, train_block_sequential
from .engine.checkpoint import atomic_write
from .evaluate import PathRanking, rank_block, rankings_from_csv, rankings_to_csv
from .space import sample_architectures
from .teacher import FeatureCache, TeacherClassifier

log = logging.getLogger(__name__)


class MissingArtifactError(FileNotFoundError):
    """An upstream artifact is absent; names the file and the subcommand that writes it."""

    def __init__(self, path: Path, producer: str):
        super().__init__(f"missing {path}; run `dnanas {producer}` first")
        self.path = path
        self.producer = producer


def _is_manifest(p: Path) -> bool:
    return p.name == "manifest.json" or p.name.endswith(".manifest.json")


def file_digest(path: Path) -> str:
    """SHA-256 of a file, or of every non-manifest file under a directory in sorted order."""
    h = hashlib.sha256()
    paths = sorted(p for p in path.rglob("*") if p.is_file() and not _is_manifest(p)) if path.is_dir() else [path]
    for p in paths:
        h.update(p.read_bytes())
    return h.hexdigest()


@dataclass
class Manifest:
    config_hash: str
    subcommand: str
    seed: int
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    tool_version: str = __version__
    duration_s: float = 0.0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"


class RunDir:
    """Artifacts of one configuration live under ``root/<config hash prefix>``."""

    def __init__(self, cfg: RunConfig, root: str | Path = "runs", path: str | Path | None = None):
        self.cfg = cfg
        self.hash = cfg.hash()
        self.path = Path(path) if path is not None else Path(root) / self.hash[:12]
        self.path.mkdir(parents=True, exist_ok=True)
        cfg_file = self.path / "config.yaml"
        if not cfg_file.exists():
            atomic_write(cfg_file, self.cfg.canonical().encode())

    # -- locations
    @property
    def teacher(self) -> Path:
        return self.path / "teacher.bin"

    @property
    def features(self) -> Path:
        return self.path / "features"

    def block(self, i: int, strategy: str = "dna") -> Path:
        return self.path / "supernet" / strategy / f"block{i}.bin"

    def block_losses(self, i: int, strategy: str = "dna") -> Path:
        return self.path / "supernet" / strategy / f"block{i}.loss.csv"

    @property
    def spos(self) -> Path:
        return self.path / "spos.bin"

    @property
    def cost_table(self) -> Path:
        return self.path / "cost_table.csv"

    def rankings(self, strategy: str = "dna") -> Path:
        return self.path / ("rankings.csv" if strategy == "dna" else f"rankings_{strategy}.csv")

    def search(self, metric: str, bound) -> Path:
        return self.path / f"search_{metric}_{'none' if bound is None else int(bound)}.json"

    def pareto(self, metric: str) -> Path:
        return self.path / f"pareto_{metric}.csv"

    @property
    def trials(self) -> Path:
        return self.path / "rank_trials.csv"

    @property
    def summary(self) -> Path:
        return self.path / "rank_summary.csv"

    @property
    def report(self) -> Path:
        return self.path / "rank_report.txt"

    # -- checks and provenance
    def require(self, path: Path, producer: str) -> Path:
        marker = path / "index.json" if path == self.features else path
        if not marker.exists():
            raise MissingArtifactError(marker, producer)
        return path

    def write_manifest(self, artifact: Path, subcommand: str, inputs: Sequence[Path], outputs: Sequence[Path],
                       started: float) -> None:
        """Write the run manifest beside ``artifact`` and every other output (inside, for directories)."""
        m = Manifest(self.hash, subcommand, self.cfg.seed,
                     {str(p.relative_to(self.path)): file_digest(p) for p in inputs},
                     [str(p.relative_to(self.path)) for p in outputs], duration_s=round(time.time() - started, 3))
        blob = m.to_json().encode()
        for out in dict.fromkeys([artifact, *outputs]):
            target = out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")
            atomic_write(target, blob)


# -- stages ------------------------------------------------------------------

def train_teacher(cfg: RunConfig, splits: dict[str, Dataset]) -> TeacherClassifier:
    t = cfg.teacher
    teacher = TeacherClassifier(cfg.space, t.epochs, t.batch_size, t.lr, t.lr_decay, t.floor, t.kernel, t.expansion,
                                cfg.seed)
    return teacher.fit(splits["train"].images, splits["train"].labels,
                       eval_set=(splits["val"].images, splits["val"].labels))


def distill_block(cfg: RunConfig, cache: FeatureCache, i: int) -> BlockDistiller:
    d = cfg.distill
    lr = d.lr_first if i == 0 else d.lr_rest
    return BlockDistiller(cfg.space, i, d.epochs, d.batch_size, lr, d.lr_decay, cfg.seed).fit(
        cache.get("train", i), cache.get("train", i + 1))


def _distill_job(args):
    cfg_dict, features_dir, i = args
    cfg = RunConfig.from_dict(cfg_dict)
    return distill_block(cfg, FeatureCache.load(features_dir), i)


def distill_blocks(cfg: RunConfig, cache: FeatureCache, blocks: Sequence[int], workers: int = 1,
                   features_dir: Path | None = None) -> list[BlockDistiller]:
    """DNA training of several blocks; with ``workers > 1`` each block runs in its own process."""
    if workers <= 1 or len(blocks) <= 1:
        return [distill_block(cfg, cache, i) for i in blocks]
    if features_dir is None:
        raise ValueError("parallel training reads features from disk; pass features_dir")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_distill_job, [(cfg.to_dict(), features_dir, i) for i in blocks]))


def distill_progressive(cfg: RunConfig, cache: FeatureCache, strategy: str, upto: int) -> list[BlockDistiller]:
    d = cfg.distill
    targets = [cache.get("train", i + 1) for i in range(upto + 1)]
    return train_block_sequential(cfg.space, cache.get("train", 0), targets, strategy, d.epochs, d.batch_size,
                                  d.lr_decay, cfg.seed, list(range(upto + 1)), d.lr_first, d.lr_rest)


def train_spos(cfg: RunConfig, splits: dict[str, Dataset]) -> SPOSSupernet:
    s = cfg.spos
    spos = SPOSSupernet(cfg.space, cfg.spos_epochs, s.batch_size, s.lr, s.lr_decay, s.calibration_batches, cfg.seed)
    return spos.fit(splits["train"].images, splits["train"].labels)


def rank_blocks(cfg: RunConfig, distillers: Sequence[BlockDistiller], cache: FeatureCache,
                cost_table: CostTable) -> list[PathRanking]:
    e = cfg.evaluate
    return [rank_block(d, cache, cost_table, "val", e.batch_size, e.memory_cap_mb * 2**20) for d in distillers]


def rank_benchmark(cfg: RunConfig, rankings: Sequence[PathRanking], spos: SPOSSupernet,
                   splits: dict[str, Dataset]) -> list[RankTrial]:
    b = cfg.bench
    val, held = splits["val"], splits[b.eval_split]
    trials = []
    for k, arch in enumerate(sample_architectures(cfg.space, b.k, b.seed)):
        seed = trial_seed(b.seed, k)
        acc = retrain_standalone(cfg.space, arch, splits["train"], held, b.epochs, b.batch_size, b.lr, b.lr_decay, seed)
        trial = RankTrial(arch, dna_score(rankings, arch), spos.score_arch(arch, val.images, val.labels), acc, seed)
        log.info("trial=%d arch=%s dna=%.5f spos=%.4f true=%.4f", k, arch.key(), trial.dna_score, trial.spos_score, acc)
        trials.append(trial)
    return trials


def write_benchmark(run: RunDir, trials: Sequence[RankTrial]) -> dict:
    summary = correlation_summary(trials)
    atomic_write(run.trials, trials_to_csv(trials).encode())
    atomic_write(run.summary, summary_csv(summary).encode())
    atomic_write(run.report, report_text(trials, summary).encode())
    return summary


def load_rankings(run: RunDir, strategy: str = "dna") -> list[PathRanking]:
    return rankings_from_csv(run.require(run.rankings(strategy), "evaluate").read_text())


def save_rankings(run: RunDir, rankings: Sequence[PathRanking], strategy: str = "dna") -> Path:
    path = run.rankings(strategy)
    atomic_write(path, rankings_to_csv(rankings).encode())
    return path


def cost_table_for(run: RunDir) -> CostTable:
    return build_cost_table(run.cfg.space, run.hash)

