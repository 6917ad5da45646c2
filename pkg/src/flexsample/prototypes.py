"""Class prototypes, distance ranking and anchor-subset selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import round_half_up
from .errors import ConfigError, InputError, UsageError

SELECTION_MODES = ("anchor", "edge", "random")


@dataclass(frozen=True)
class Prototype:
    class_id: int
    mean_feature: np.ndarray
    population: int


@dataclass
class AnchorSubset:
    selected: np.ndarray  # sorted sample ids
    per_class: list[np.ndarray]
    target_counts: list[int]
    s: float
    r_hat: float
    pool: np.ndarray  # train ids not selected, sorted

    @property
    def achieved_ratio(self) -> float:
        sizes = [len(p) for p in self.per_class]
        return sizes[0] / sizes[-1] if sizes[-1] else float("inf")


def compute_prototypes(embeddings, labels, k: int | None = None) -> list[Prototype]:
    """Per-class mean embedding."""
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    k = int(labels.max()) + 1 if k is None else k
    protos = []
    for c in range(k):
        members = emb[labels == c]
        if len(members) == 0:
            raise InputError(f"class {c} has no samples; cannot form a prototype")
        protos.append(Prototype(c, members.sum(axis=0) / len(members), len(members)))
    return protos


def prototype_distance(prototype: Prototype, embedding) -> float:
    e = np.asarray(embedding, dtype=np.float64)
    if e.shape != prototype.mean_feature.shape:
        raise UsageError(f"embedding shape {e.shape} != prototype {prototype.mean_feature.shape}")
    return float(np.linalg.norm(prototype.mean_feature - e))


def anchor_counts(train_counts, r: float, s: float) -> list[int]:
    """Target per-class anchor counts with head/tail ratio r*s.

    The head target is ``s * N0`` and counts decay geometrically from there,
    so with ``N_tail = N0 / r`` the tail is kept whole. Each target is clamped
    to [1, N_c]; ``s = 1`` keeps every training sample.
    """
    if not 0 < s <= 1:
        raise ConfigError(f"scaling s must lie in (0, 1], got {s}")
    counts = [int(c) for c in train_counts]
    if s == 1:
        return counts
    k = len(counts)
    r_hat = r * s
    base = s * counts[0]
    out = []
    for c, n_c in enumerate(counts):
        target = round_half_up(base * r_hat ** (-c / (k - 1))) if k > 1 else round_half_up(base)
        out.append(min(max(target, 1), n_c))
    return out


def select_subset(embeddings, labels, ids, prototypes, target_counts, mode: str = "anchor",
                  seed: int = 0, s: float = float("nan"), r: float = float("nan")) -> AnchorSubset:
    """Pick ``target_counts[c]`` ids per class.

    ``anchor`` takes the closest samples to the class prototype, ``edge`` the
    farthest, ``random`` a uniform draw. Distance ties go to the lower id.
    """
    if mode not in SELECTION_MODES:
        raise ConfigError(f"unknown selection mode {mode!r}")
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    ids = np.asarray(ids, dtype=np.int64)
    rng = np.random.default_rng([seed, 5])
    per_class = []
    for proto, n_hat in zip(prototypes, target_counts):
        c = proto.class_id
        members = np.flatnonzero(labels == c)
        if n_hat > len(members):
            raise UsageError(f"class {c}: target {n_hat} exceeds population {len(members)}")
        cls_ids = ids[members]
        if mode == "random":
            chosen = rng.choice(np.sort(cls_ids), size=n_hat, replace=False)
        else:
            dist = np.linalg.norm(emb[members] - proto.mean_feature, axis=1)
            key = dist if mode == "anchor" else -dist
            order = np.lexsort((cls_ids, key))
            chosen = cls_ids[order[:n_hat]]
        per_class.append(np.sort(chosen))
    selected = np.sort(np.concatenate(per_class)) if per_class else np.array([], dtype=np.int64)
    pool = np.setdiff1d(ids, selected)
    return AnchorSubset(selected, per_class, list(target_counts), s, r * s, pool)
