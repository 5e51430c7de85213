"""Synthetic image-like data and the plain-text dataset format.

Each class is a Gaussian around a random, fairly dark intensity pattern on
an H x W grid. The 2 x 2 corner cells are background (mean 0, small noise)
so a corner trigger is a feature the clean data never uses.

Text format: first line ``d C count``, then ``count`` rows of ``d`` floats
followed by an integer label, whitespace separated.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .model import Dataset


@dataclass(frozen=True)
class DataConfig:
    num_classes: int = 10
    grid: tuple[int, int] = (8, 8)
    n_train: int = 10_000
    n_test: int = 2_000
    intensity: tuple[float, float] = (0.0, 0.5)
    noise: float = 0.3
    background: float = 0.0
    background_noise: float = 0.05
    edge_train: int = 100
    edge_test: int = 200
    edge_source_label: int = 0
    train_path: str | None = None
    test_path: str | None = None
    edge_train_path: str | None = None
    edge_test_path: str | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "intensity", tuple(self.intensity))

    @property
    def input_dim(self) -> int:
        return self.grid[0] * self.grid[1]


@dataclass
class SyntheticTask:
    train: Dataset
    test: Dataset
    edge_train: Dataset
    edge_test: Dataset
    class_means: np.ndarray


def background_mask(grid: tuple[int, int], corner: int = 2) -> np.ndarray:
    H, W = grid
    m = np.ones((H, W), dtype=bool)
    for r in (slice(0, corner), slice(H - corner, H)):
        for c in (slice(0, corner), slice(W - corner, W)):
            m[r, c] = False
    return m.ravel()


def _sample(rng, means, labels, noise, bg_noise, fg):
    sd = np.where(fg, noise, bg_noise)
    X = means[labels] + rng.normal(size=(labels.size, means.shape[1])) * sd
    return np.clip(X, 0.0, 1.0)


def make_task(cfg: DataConfig) -> SyntheticTask:
    """Class-balanced train/test splits plus an edge-case distribution.

    Edge examples are a shifted variant of ``edge_source_label``: every
    foreground cell is pushed by +-0.3, so they sit off the clean data's
    support while still resembling the source class.
    """
    rng = np.random.default_rng(cfg.seed)
    C, d = cfg.num_classes, cfg.input_dim
    fg = background_mask(cfg.grid)
    means = np.where(fg, rng.uniform(*cfg.intensity, size=(C, d)), cfg.background)

    def balanced(n):
        y = np.arange(n) % C
        return rng.permutation(y)

    y_train, y_test = balanced(cfg.n_train), balanced(cfg.n_test)
    train = Dataset(_sample(rng, means, y_train, cfg.noise, cfg.background_noise, fg), y_train)
    test = Dataset(_sample(rng, means, y_test, cfg.noise, cfg.background_noise, fg), y_test)

    shift = rng.choice([-0.3, 0.3], size=d) * fg
    edge_mean = np.clip(means[cfg.edge_source_label] + shift, 0.0, 1.0)[None, :]
    src = cfg.edge_source_label
    e_tr = np.zeros(cfg.edge_train, dtype=np.int64)
    e_te = np.zeros(cfg.edge_test, dtype=np.int64)
    edge_train = Dataset(_sample(rng, edge_mean, e_tr, cfg.noise, cfg.background_noise, fg), e_tr + src)
    edge_test = Dataset(_sample(rng, edge_mean, e_te, cfg.noise, cfg.background_noise, fg), e_te + src)
    return SyntheticTask(train, test, edge_train, edge_test, means)


def write_dataset(path: str | os.PathLike, data: Dataset, num_classes: int) -> None:
    with open(path, "w") as f:
        f.write(f"{data.X.shape[1]} {num_classes} {len(data)}\n")
        for x, y in zip(data.X, data.y):
            f.write(" ".join(repr(float(v)) for v in x))
            f.write(f" {int(y)}\n")


def read_dataset(path: str | os.PathLike) -> tuple[Dataset, int]:
    """Returns the dataset and its declared class count."""
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: header must be 'd C count'")
        d, C, count = (int(v) for v in header)
        rows = np.loadtxt(f, ndmin=2) if count else np.empty((0, d + 1))
    if rows.shape != (count, d + 1):
        raise ValueError(f"{path}: expected {count} rows of {d + 1} values, got {rows.shape}")
    labels = rows[:, d]
    if np.any(labels != np.round(labels)) or np.any(labels < 0) or np.any(labels >= C):
        raise ValueError(f"{path}: labels must be integers in [0, {C})")
    return Dataset(rows[:, :d], labels.astype(np.int64)), C


def load_task(cfg: DataConfig) -> SyntheticTask:
    """The synthetic task, with any split that has a file path read from disk instead.

    Loaded splits must agree with ``cfg`` on input dimension and class count.
    ``class_means`` always describes the synthetic generator.
    """
    task = make_task(cfg)
    for name in ("train", "test", "edge_train", "edge_test"):
        path = getattr(cfg, f"{name}_path")
        if path is None:
            continue
        data, C = read_dataset(path)
        if C != cfg.num_classes or data.X.shape[1] != cfg.input_dim:
            raise ValueError(
                f"{path}: declares d={data.X.shape[1]}, C={C}; config expects "
                f"d={cfg.input_dim}, C={cfg.num_classes}"
            )
        setattr(task, name, data)
    return task
