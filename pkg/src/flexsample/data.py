"""Synthetic long-tailed datasets, stratified splits and CSV embedding I/O."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError


@dataclass(frozen=True)
class ClassSpec:
    class_id: int
    sub_mode_means: tuple[tuple[float, ...], ...]
    sub_mode_std: float

    def __post_init__(self):
        if len(self.sub_mode_means) < 1:
            raise ConfigError(f"class {self.class_id}: needs at least one sub-mode")
        if not self.sub_mode_std > 0:
            raise ConfigError(f"class {self.class_id}: sub_mode_std must be > 0")

    @property
    def archetype(self) -> str:
        return "compact" if len(self.sub_mode_means) == 1 else "diverse"

    @property
    def dim(self) -> int:
        return len(self.sub_mode_means[0])


@dataclass(frozen=True)
class DatasetConfig:
    k: int
    r: float
    N0: int
    d: int
    seed: int
    class_specs: tuple[ClassSpec, ...]
    val_reserve: int = 10
    test_reserve: int = 20

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        if self.r < 1:
            raise ConfigError(f"imbalance ratio must be >= 1, got {self.r}")
        if self.N0 < self.k:
            raise ConfigError(f"N0 must be >= k, got N0={self.N0}, k={self.k}")

    def counts(self) -> list[int]:
        return pareto_counts(self.k, self.r, self.N0)


@dataclass
class Dataset:
    ids: np.ndarray  # (n,) int64, unique
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64 in [0, k)
    k: int
    label_names: list = field(default_factory=list)  # original label per class index

    def __post_init__(self):
        self._pos = {int(i): p for p, i in enumerate(self.ids)}
        if len(self._pos) != len(self.ids):
            raise ConfigError("sample ids must be unique")

    def __len__(self):
        return len(self.ids)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def positions(self, ids) -> np.ndarray:
        return np.fromiter((self._pos[int(i)] for i in ids), dtype=np.int64, count=len(ids))

    def subset(self, ids):
        """Features and labels for ``ids`` in the given order."""
        pos = self.positions(ids)
        return self.features[pos], self.labels[pos]

    def class_counts(self, ids=None) -> np.ndarray:
        labels = self.labels if ids is None else self.labels[self.positions(ids)]
        return np.bincount(labels, minlength=self.k)


@dataclass(frozen=True)
class SplitSet:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def pareto_counts(k: int, r: float, N0: int) -> list[int]:
    """Per-class counts N_c = N0 * r**(-c/(k-1)) with exact endpoints."""
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if r < 1:
        raise ConfigError(f"imbalance ratio must be >= 1, got {r}")
    if N0 < r:
        raise ConfigError(f"N0={N0} < r={r}: tail class would be empty")
    counts = [max(1, round_half_up(N0 * r ** (-c / (k - 1)))) for c in range(k)]
    counts[0] = int(N0)
    counts[-1] = max(1, round_half_up(N0 / r))
    return counts


def default_class_specs(
    k: int,
    d: int,
    rng,
    separation: float = 3.0,
    head_modes: int = 4,
    head_std: float = 7.0,
    medium_std: float = 4.0,
    tail_std: float = 1.5,
) -> tuple[ClassSpec, ...]:
    """Class 0 diverse (several sub-modes), last two classes tight, rest moderate."""
    rng = np.random.default_rng(rng)
    specs = []
    for c in range(k):
        n_modes = head_modes if c == 0 else 1
        means = rng.standard_normal((n_modes, d)) * separation
        if c == 0:
            std = head_std
        elif c >= k - 2:
            std = tail_std
        else:
            std = medium_std
        specs.append(ClassSpec(c, tuple(tuple(float(v) for v in m) for m in means), std))
    return tuple(specs)


def benchmark_config(r: float = 100, seed: int = 0, k: int = 8, d: int = 32, N0: int = 1000,
                     val_reserve: int = 10, test_reserve: int = 20, **spec_kw) -> DatasetConfig:
    """The default synthetic long-tailed benchmark."""
    specs = default_class_specs(k, d, np.random.default_rng([seed, 1]), **spec_kw)
    return DatasetConfig(k=k, r=r, N0=N0, d=d, seed=seed, class_specs=specs,
                         val_reserve=val_reserve, test_reserve=test_reserve)


def generate_dataset(config: DatasetConfig) -> Dataset:
    if len(config.class_specs) != config.k:
        raise ConfigError(f"{len(config.class_specs)} class specs for k={config.k}")
    for spec in config.class_specs:
        if spec.dim != config.d or any(len(m) != config.d for m in spec.sub_mode_means):
            raise ConfigError(f"class {spec.class_id}: sub-mode dim != d={config.d}")

    rng = np.random.default_rng([config.seed, 2])
    reserve = config.val_reserve + config.test_reserve
    feats, labels = [], []
    for c, (spec, n_train) in enumerate(zip(config.class_specs, config.counts())):
        n = n_train + reserve
        means = np.asarray(spec.sub_mode_means, dtype=np.float64)
        modes = rng.integers(0, len(means), size=n)
        feats.append(means[modes] + spec.sub_mode_std * rng.standard_normal((n, config.d)))
        labels.append(np.full(n, c, dtype=np.int64))
    features = np.concatenate(feats)
    labels = np.concatenate(labels)
    return Dataset(np.arange(len(labels), dtype=np.int64), features, labels, config.k,
                   label_names=list(range(config.k)))


def split_dataset(dataset: Dataset, val_per_class: int = 10, test_per_class: int = 20,
                  seed: int = 0) -> SplitSet:
    """Stratified split: exact val/test counts per class, the rest is train."""
    if val_per_class < 0 or test_per_class < 0:
        raise ConfigError("per-class split sizes must be non-negative")
    rng = np.random.default_rng([seed, 3])
    train, val, test = [], [], []
    need = val_per_class + test_per_class
    for c in range(dataset.k):
        ids = np.sort(dataset.ids[dataset.labels == c])
        if need > 0 and len(ids) <= need:
            raise ConfigError(
                f"class {c} has {len(ids)} samples, needs more than {need} for val+test"
            )
        ids = rng.permutation(ids)
        val.append(ids[:val_per_class])
        test.append(ids[val_per_class:need])
        train.append(ids[need:])
    return SplitSet(*(np.sort(np.concatenate(x)).astype(np.int64) for x in (train, val, test)))


def export_embeddings(dataset: Dataset, path, ids=None) -> None:
    """Write ``id,label,f1..fd`` CSV. Floats use repr so they round-trip exactly."""
    pos = np.arange(len(dataset)) if ids is None else dataset.positions(ids)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label"] + [f"f{j + 1}" for j in range(dataset.d)])
        for p in pos:
            w.writerow([int(dataset.ids[p]), int(dataset.labels[p])]
                       + [repr(float(v)) for v in dataset.features[p]])


def ingest_embeddings(path, format: str = "csv") -> Dataset:
    """Read precomputed embeddings; labels are remapped to 0..k-1 by descending count."""
    if format != "csv":
        raise IngestionError(f"unknown format {format!r}")
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"no such file: {path}")

    ids, raw_labels, rows = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError("empty file", row=1)
        header = [h.strip() for h in header]
        d = len(header) - 2
        if header[:2] != ["id", "label"] or d < 1:
            raise IngestionError("header must be id,label,f1,...,fd", row=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 2:
                raise IngestionError(f"expected {d + 2} fields, got {len(row)}", row=lineno)
            try:
                ids.append(int(row[0]))
                raw_labels.append(int(row[1]))
                rows.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise IngestionError(f"non-numeric field ({exc})", row=lineno) from None
    if not rows:
        raise IngestionError("file has no samples")
    if len(set(ids)) != len(ids):
        raise IngestionError("duplicate sample ids")

    features = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        bad = int(np.argwhere(~np.isfinite(features))[0, 0]) + 2
        raise IngestionError("non-finite feature value", row=bad)
    uniq, counts = np.unique(raw_labels, return_counts=True)
    order = sorted(range(len(uniq)), key=lambda i: (-counts[i], uniq[i]))
    remap = {int(uniq[i]): new for new, i in enumerate(order)}
    labels = np.array([remap[l] for l in raw_labels], dtype=np.int64)
    return Dataset(np.asarray(ids, dtype=np.int64), features, labels, len(uniq),
                   label_names=[int(uniq[i]) for i in order])
