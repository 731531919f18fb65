"""Datasets: CIFAR-10 binary batches and a seeded synthetic fixture."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

RECORD = 3073
# per-channel statistics of the CIFAR-10 training set, on the [0, 1] scale
CIFAR_MEAN = np.array([0.4914, 0.4822, 0.4465], dtype=np.float32)
CIFAR_STD = np.array([0.2470, 0.2435, 0.2616], dtype=np.float32)


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, H, W) float32
    labels: np.ndarray  # (N,) int64
    split: str = "train"
    class_count: int = 10

    def __post_init__(self):
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise ValueError("images must be (N, C, H, W) with one label per image")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx: np.ndarray, split: str | None = None) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], split or self.split, self.class_count)


def parse_cifar10_bytes(raw: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Decode records of 1 label byte + 3072 channel-major pixel bytes into uint8 arrays."""
    if len(raw) == 0 or len(raw) % RECORD:
        raise DataFormatError(f"CIFAR-10 payload of {len(raw)} bytes is not a positive multiple of {RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise DataFormatError(f"record {bad} has label byte {labels[bad]} > 9")
    pixels = rec[:, 1:].reshape(-1, 3, 32, 32)
    return pixels, labels


def normalize_cifar(pixels: np.ndarray) -> np.ndarray:
    x = pixels.astype(np.float32) / 255.0
    return (x - CIFAR_MEAN[None, :, None, None]) / CIFAR_STD[None, :, None, None]


def load_cifar10(path: str | Path, split: str | None = None) -> Dataset:
    """Load one CIFAR-10 binary file, or a directory of ``data_batch_*.bin`` / ``test_batch.bin``.

    Pixels are scaled to [0, 1] and normalized with CIFAR_MEAN / CIFAR_STD.
    """
    path = Path(path)
    if path.is_dir():
        if split == "test":
            files = [path / "test_batch.bin"]
        else:
            files = sorted(path.glob("data_batch_*.bin"))
        if not files or not all(f.exists() for f in files):
            raise FileNotFoundError(f"no CIFAR-10 batches for split {split or 'train'} under {path}")
    else:
        files = [path]
    pix, lab = zip(*(parse_cifar10_bytes(f.read_bytes()) for f in files))
    return Dataset(normalize_cifar(np.concatenate(pix)), np.concatenate(lab), split or "train", 10)


def class_components(seed: int, class_count: int, waves: int = 3, channels: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Per class, ``waves`` integer spatial frequencies (C, W, 2) and their colors (C, W, channels)."""
    rng = np.random.default_rng([seed, 7919])
    freqs = rng.integers(-3, 4, size=(class_count, waves, 2))
    dc = np.all(freqs == 0, axis=2)
    freqs[dc, 0] = 1
    colors = rng.standard_normal((class_count, waves, channels))
    return freqs, colors


def _gratings(freqs: np.ndarray, colors: np.ndarray, phases: np.ndarray, amps: np.ndarray, size: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    arg = 2 * np.pi * (freqs[..., 0, None, None] * xx + freqs[..., 1, None, None] * yy) / size + phases[..., None, None]
    waves = amps[..., None, None] * np.cos(arg)  # (..., W, S, S)
    img = np.einsum("...wc,...wyx->...cyx", colors, waves)
    rms = np.sqrt(np.mean(img**2, axis=(-3, -2, -1), keepdims=True))
    return img / rms


def class_templates(seed: int, class_count: int, size: int, waves: int = 3) -> np.ndarray:
    """Zero-phase, unit-amplitude rendering of every class pattern, unit RMS."""
    freqs, colors = class_components(seed, class_count, waves)
    return _gratings(freqs, colors, np.zeros(freqs.shape[:2]), np.ones(freqs.shape[:2]), size)


def gen_synthetic(seed: int, class_count: int = 10, images_per_class: int = 100, size: int = 16,
                  noise: float = 1.0, amplitude_jitter: float = 0.5, split: str = "train") -> Dataset:
    """Colored grating mixtures, one fixed frequency/color set per class, plus Gaussian noise.

    Every image redraws each component's phase uniformly and its amplitude in
    1 +- ``amplitude_jitter``, so a class is identified by where its energy sits
    in frequency and color rather than by a pixel template; telling classes
    apart takes frequency-selective filters. The same seed always yields
    bit-identical arrays; the ``split`` name feeds the sampling stream so
    train and test draws differ.
    """
    freqs, colors = class_components(seed, class_count)
    rng = np.random.default_rng([seed, sum(map(ord, split))])
    n = class_count * images_per_class
    labels = np.repeat(np.arange(class_count), images_per_class)
    w = freqs.shape[1]
    phases = rng.uniform(0, 2 * np.pi, size=(n, w))
    amps = rng.uniform(1 - amplitude_jitter, 1 + amplitude_jitter, size=(n, w))
    images = _gratings(freqs[labels], colors[labels], phases, amps, size)
    images += noise * rng.standard_normal(images.shape)
    order = rng.permutation(n)
    return Dataset(images[order].astype(np.float32), labels[order].astype(np.int64), split, class_count)


def holdout_split(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified hold-out: ``fraction`` of every class moves to a ``val`` split."""
    rng = np.random.default_rng([seed, 31])
    val_idx = []
    for c in range(ds.class_count):
        idx = np.flatnonzero(ds.labels == c)
        k = int(round(fraction * len(idx)))
        val_idx.extend(rng.permutation(idx)[:k].tolist())
    mask = np.zeros(len(ds), dtype=bool)
    mask[val_idx] = True
    return ds.subset(np.flatnonzero(~mask), "train"), ds.subset(np.flatnonzero(mask), "val")


def load_splits(cfg) -> dict[str, Dataset]:
    """train / val / test splits for a DataConfig."""
    if cfg.kind == "synthetic":
        kw = dict(size=cfg.size, noise=cfg.noise, amplitude_jitter=cfg.amplitude_jitter)
        full = gen_synthetic(cfg.seed, cfg.class_count, cfg.images_per_class, split="train", **kw)
        test = gen_synthetic(cfg.seed, cfg.class_count, cfg.test_per_class, split="test", **kw)
    else:
        if not cfg.path:
            raise FileNotFoundError("data.path must point at the CIFAR-10 binary directory")
        full = load_cifar10(cfg.path, "train")
        test = load_cifar10(cfg.path, "test")
    train, val = holdout_split(full, cfg.val_fraction, cfg.seed)
    return {"train": train, "val": val, "test": test}


def batches(n: int, batch_size: int, rng: np.random.Generator | None = None):
    """Index arrays covering ``range(n)``; shuffled when ``rng`` is given."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]
