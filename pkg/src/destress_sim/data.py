"""Datasets, CSV ingestion and the uniform split across agents."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, softmax

from .errors import DataIOError, ParseError, RaggedRowError, TooFewSamples
from .model import Sample

__all__ = [
    "Dataset",
    "Partition",
    "generate_synthetic",
    "generate_synthetic_multiclass",
    "load_csv",
    "write_csv",
    "partition_uniform",
    "split_holdout",
    "normalize_rows",
]


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        f = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=float)
        if f.ndim != 2 or f.shape[0] < 1:
            raise ValueError("dataset needs at least one sample with a feature vector")
        if y.shape != (f.shape[0],):
            raise ValueError("one label per sample required")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def d_f(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n_samples

    def sample(self, i: int) -> Sample:
        return Sample(self.features[i], float(self.labels[i]))

    @property
    def samples(self) -> list[Sample]:
        return [self.sample(i) for i in range(self.n_samples)]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx])

    def equals(self, other: "Dataset") -> bool:
        return (np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))


@dataclass(frozen=True, eq=False)
class Partition:
    """``shards[i]`` lists the dataset rows held by agent ``i``; all shards have ``m`` rows."""

    shards: np.ndarray

    def __post_init__(self) -> None:
        s = np.asarray(self.shards, dtype=np.intp)
        if s.ndim != 2 or s.shape[1] < 1:
            raise ValueError("partition needs n shards of equal positive size")
        if np.unique(s).size != s.size:
            raise ValueError("shards must be disjoint")
        s.setflags(write=False)
        object.__setattr__(self, "shards", s)

    @property
    def n(self) -> int:
        return self.shards.shape[0]

    @property
    def m(self) -> int:
        return self.shards.shape[1]


def normalize_rows(features: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    return features / np.where(norms > 0, norms, 1.0)


def generate_synthetic(n_samples: int, d_f: int, seed: int, label_noise: float = 0.1) -> Dataset:
    """Unit-norm Gaussian features with labels from a planted logistic model.

    A planted parameter of norm 5 gives ``P(l = 1) = sigmoid(-x*.f)``; a
    further ``label_noise`` fraction of labels is flipped.
    """
    if n_samples < 1 or d_f < 1:
        raise ValueError("need n_samples >= 1 and d_f >= 1")
    rng = np.random.default_rng(seed)
    feats = normalize_rows(rng.standard_normal((n_samples, d_f)))
    planted = rng.standard_normal(d_f)
    planted *= 5.0 / np.linalg.norm(planted)
    labels = (rng.random(n_samples) < expit(-feats @ planted)).astype(float)
    flip = rng.random(n_samples) < label_noise
    labels[flip] = 1.0 - labels[flip]
    return Dataset(feats, labels)


def generate_synthetic_multiclass(n_samples: int, d_f: int, n_classes: int, seed: int) -> Dataset:
    """Unit-norm features labelled by sampling a planted linear softmax model."""
    rng = np.random.default_rng(seed)
    feats = normalize_rows(rng.standard_normal((n_samples, d_f)))
    planted = 5.0 * rng.standard_normal((d_f, n_classes))
    probs = softmax(feats @ planted, axis=1)
    cum = probs.cumsum(axis=1)
    u = rng.random((n_samples, 1))
    labels = np.minimum((u > cum).sum(axis=1), n_classes - 1).astype(float)
    return Dataset(feats, labels)


def load_csv(path: str | Path, label_column: int, *, header: bool = False, normalize: bool = False) -> Dataset:
    """Read a rectangular numeric CSV; ``label_column`` is 0-based (negative counts from the end)."""
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise DataIOError(f"cannot open {path}: {exc.strerror}") from exc
    rows: list[list[float]] = []
    width = None
    with handle:
        for lineno, row in enumerate(csv.reader(handle), start=1):
            if header and lineno == 1:
                continue
            if not row or all(not tok.strip() for tok in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise RaggedRowError(lineno, width, len(row))
            try:
                rows.append([float(tok) for tok in row])
            except ValueError:
                raise ParseError(lineno, "non-numeric token") from None
    if not rows:
        raise ParseError(1, "no data rows")
    table = np.array(rows)
    col = label_column % table.shape[1]
    if not -table.shape[1] <= label_column < table.shape[1] or table.shape[1] < 2:
        raise ParseError(1, f"label column {label_column} out of range")
    feats = np.delete(table, col, axis=1)
    if normalize:
        feats = normalize_rows(feats)
    return Dataset(feats, table[:, col])


def write_csv(ds: Dataset, path: str | Path, label_column: int = -1) -> None:
    """Write ``ds`` in the format :func:`load_csv` reads back bit-for-bit."""
    width = ds.d_f + 1
    col = label_column % width
    table = np.insert(ds.features, col, ds.labels, axis=1)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in table:
            writer.writerow([repr(float(v)) for v in row])


def partition_uniform(ds: Dataset, n: int, seed: int) -> Partition:
    """Seeded shuffle truncated to ``n * (N // n)`` rows, cut into ``n`` equal blocks."""
    if n < 1:
        raise ValueError("need at least one agent")
    if ds.n_samples < n:
        raise TooFewSamples(f"{ds.n_samples} samples cannot be split across {n} agents")
    m = ds.n_samples // n
    perm = np.random.default_rng(seed).permutation(ds.n_samples)
    return Partition(perm[: n * m].reshape(n, m))


def split_holdout(ds: Dataset, frac: float, seed: int) -> tuple[Dataset, Dataset | None]:
    """Seeded (train, test) split; ``frac == 0`` keeps everything for training."""
    if frac <= 0.0:
        return ds, None
    if not frac < 1.0:
        raise ValueError(f"holdout fraction must be < 1, got {frac}")
    perm = np.random.default_rng(seed).permutation(ds.n_samples)
    n_test = max(1, int(round(frac * ds.n_samples)))
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))
