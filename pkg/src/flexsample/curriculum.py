"""Difficulty-aware curriculum querying.

Class-level sampling probabilities come from per-class accuracy; instance
ranking within a class uses BALD mutual information over MC-dropout draws.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import round_half_up
from .errors import ConfigError, InputError, UsageError
from .nn import NetworkConfig, NetworkParams, forward, softmax

ACC_FLOOR = 1e-3


@dataclass(frozen=True)
class ClassProbabilities:
    raw: np.ndarray  # p_c = max(1 - acc_c, eps)
    delta: float  # K / sum(p)
    normalized: np.ndarray  # delta * p, sums to K


def class_probs_from_accuracy(per_class_accuracy, eps: float = ACC_FLOOR) -> ClassProbabilities:
    acc = np.asarray(per_class_accuracy, dtype=np.float64)
    if acc.ndim != 1 or len(acc) < 1:
        raise InputError("need a non-empty vector of per-class accuracies")
    if np.any(~np.isfinite(acc)) or np.any(acc < 0) or np.any(acc > 1):
        raise InputError(f"accuracies must lie in [0, 1], got {acc}")
    p = np.maximum(1.0 - acc, eps)
    delta = len(p) / p.sum()
    return ClassProbabilities(p, float(delta), delta * p)


def posterior_draws(config: NetworkConfig, params: NetworkParams, x, T: int = 10, rng=None):
    """``T`` dropout-perturbed predictive distributions per instance, shape (n, T, K)."""
    if T < 2:
        raise ConfigError(f"need at least 2 posterior draws, got {T}")
    rng = np.random.default_rng(rng)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = np.empty((len(x), T, config.layer_dims[-1]))
    for t in range(T):
        logits, _ = forward(config, params, x, mode="train", mask_seed=rng)
        out[:, t, :] = softmax(logits)
    return out


def _entropy(p: np.ndarray) -> np.ndarray:
    # 0 * log 0 := 0
    logp = np.log(np.where(p > 0, p, 1.0))
    return -(p * logp).sum(axis=-1)


def _check_draws(draws: np.ndarray) -> None:
    if draws.ndim < 2 or draws.shape[-2] < 1:
        raise InputError("draws must have shape (..., T, K)")
    if np.any(~np.isfinite(draws)) or np.any(draws < 0):
        raise InputError("draws must be finite and non-negative")
    if np.any(np.abs(draws.sum(axis=-1) - 1.0) > 1e-9):
        raise InputError("every draw must sum to 1")


def bald_mutual_information(draws) -> float:
    """Entropy of the mean prediction minus mean entropy of the draws (nats)."""
    d = np.asarray(draws, dtype=np.float64)
    if d.ndim != 2:
        raise InputError("expected draws of shape (T, K) for one instance")
    return float(bald_scores(d[None])[0])


def bald_scores(draws) -> np.ndarray:
    """Vectorized BALD over draws of shape (n, T, K)."""
    d = np.asarray(draws, dtype=np.float64)
    _check_draws(d)
    mi = _entropy(d.mean(axis=-2)) - _entropy(d).mean(axis=-1)
    return np.maximum(mi, 0.0)


@dataclass(frozen=True)
class QueryResult:
    selected: np.ndarray  # sorted ids
    quotas: list[int]


def class_quotas(pool_sizes, probs: ClassProbabilities, budget_fraction: float) -> list[int]:
    return [min(int(u), round_half_up(float(p) * budget_fraction * int(u)))
            for u, p in zip(pool_sizes, probs.normalized)]


def rank_and_query(pool_ids, pool_labels, uncertainty, probs: ClassProbabilities,
                   budget_fraction: float, min_select: int = 0) -> QueryResult:
    """Select the most uncertain pool instances per class under per-class quotas.

    Quota for class c is ``min(U_c, round(p_hat_c * budget_fraction * U_c))``.
    If every quota rounds to zero while the pool is non-empty, ``min_select``
    instances are still taken from the classes with the largest ``p_hat``.
    """
    if not 0 < budget_fraction <= 1:
        raise ConfigError(f"budget_fraction must lie in (0, 1], got {budget_fraction}")
    pool_ids = np.asarray(pool_ids, dtype=np.int64)
    pool_labels = np.asarray(pool_labels)
    unc = np.asarray(uncertainty, dtype=np.float64)
    k = len(probs.normalized)
    if len(pool_ids) == 0:
        return QueryResult(np.array([], dtype=np.int64), [0] * k)
    if not (len(pool_ids) == len(pool_labels) == len(unc)):
        raise UsageError("pool ids, labels and uncertainties differ in length")

    sizes = np.bincount(pool_labels, minlength=k)
    quotas = class_quotas(sizes, probs, budget_fraction)
    if sum(quotas) < min_select:
        # highest p_hat first, ties to the lower class index
        for c in sorted(range(k), key=lambda c: (-probs.normalized[c], c)):
            extra = min(sizes[c] - quotas[c], min_select - sum(quotas))
            quotas[c] += max(extra, 0)
            if sum(quotas) >= min_select:
                break

    chosen = []
    for c in range(k):
        if quotas[c] == 0:
            continue
        members = np.flatnonzero(pool_labels == c)
        order = np.lexsort((pool_ids[members], -unc[members]))
        chosen.append(pool_ids[members[order[: quotas[c]]]])
    selected = np.sort(np.concatenate(chosen)) if chosen else np.array([], dtype=np.int64)
    return QueryResult(selected, quotas)


@dataclass
class QueryEvent:
    epoch: int
    quotas: list[int]
    selected: list[int]
    probs: list[float]
    source: str = "val"  # split the class accuracies came from


@dataclass
class CurriculumState:
    train_ids: np.ndarray
    pool_ids: np.ndarray
    query_patience: int = 10
    stop_patience: int = 20
    max_epochs: int = 100
    warmup_epochs: int = 0
    budget_fraction: float = 0.1
    min_delta: float = 1e-6
    epoch: int = 0
    plateau: int = 0  # epochs since last improvement or query
    stall: int = 0  # epochs since last improvement
    best: float = -np.inf
    events: list[QueryEvent] = field(default_factory=list)

    def __post_init__(self):
        self.train_ids = np.sort(np.asarray(self.train_ids, dtype=np.int64))
        self.pool_ids = np.sort(np.asarray(self.pool_ids, dtype=np.int64))
        if np.intersect1d(self.train_ids, self.pool_ids).size:
            raise UsageError("training set and pool overlap")


@dataclass(frozen=True)
class Action:
    kind: str  # "continue" | "query" | "stop"
    budget: float = 0.0

    def __repr__(self):
        return f"query({self.budget})" if self.kind == "query" else self.kind


CONTINUE = Action("continue")
STOP = Action("stop")


def curriculum_step(state: CurriculumState, val_history) -> Action:
    """Advance one epoch given the validation top-1 history (latest last)."""
    if len(val_history) == 0:
        raise UsageError("val history is empty")
    state.epoch = len(val_history)
    latest = float(val_history[-1])
    if latest > state.best + state.min_delta:
        state.best = latest
        state.plateau = 0
        state.stall = 0
    else:
        state.plateau += 1
        state.stall += 1

    if state.epoch >= state.max_epochs:
        return STOP
    if len(state.pool_ids) > 0:
        if state.plateau >= state.query_patience and state.epoch >= state.warmup_epochs:
            state.plateau = 0
            return Action("query", state.budget_fraction)
        return CONTINUE
    if state.stall >= state.stop_patience:
        return STOP
    return CONTINUE


def apply_query(state: CurriculumState, selected, quotas, probs=None, source="val") -> QueryEvent:
    """Move ``selected`` ids from the pool into the training set and log the event."""
    selected = np.sort(np.asarray(selected, dtype=np.int64))
    if not np.isin(selected, state.pool_ids).all():
        raise UsageError("queried ids must come from the current pool")
    state.pool_ids = np.setdiff1d(state.pool_ids, selected)
    state.train_ids = np.union1d(state.train_ids, selected)
    event = QueryEvent(state.epoch, [int(q) for q in quotas], selected.tolist(),
                       [] if probs is None else [float(p) for p in probs.normalized], source)
    state.events.append(event)
    return event
