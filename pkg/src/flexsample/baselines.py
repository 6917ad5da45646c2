"""Class-balancing baselines: RS sampler, RW / CB weights and focal loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError
from .nn import log_softmax

LOSS_KINDS = ("ce", "rw", "focal", "cb")
SAMPLER_MODES = ("instance_uniform", "class_uniform")


@dataclass(frozen=True)
class SamplerSpec:
    mode: str = "instance_uniform"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in SAMPLER_MODES:
            raise ConfigError(f"unknown sampler mode {self.mode!r}")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "ce"
    gamma: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if (self.gamma is not None) != (self.kind == "focal"):
            raise ConfigError("gamma is required for focal loss and only for it")
        if (self.beta is not None) != (self.kind == "cb"):
            raise ConfigError("beta is required for cb loss and only for it")
        if self.gamma is not None and self.gamma < 0:
            raise ConfigError("gamma must be >= 0")


def balanced_resample(labels, batch_size: int, rng, k: int | None = None) -> np.ndarray:
    """Positions into ``labels``: class uniform over K, then instance uniform, with replacement."""
    labels = np.asarray(labels)
    k = int(labels.max()) + 1 if k is None else k
    members = [np.flatnonzero(labels == c) for c in range(k)]
    for c, m in enumerate(members):
        if len(m) == 0:
            raise ConfigError(f"class {c} is empty; cannot re-sample it")
    rng = np.random.default_rng(rng)
    classes = rng.integers(0, k, size=batch_size)
    sizes = np.array([len(m) for m in members])
    offsets = np.floor(rng.random(batch_size) * sizes[classes]).astype(np.int64)
    return np.array([members[c][o] for c, o in zip(classes, offsets)], dtype=np.int64)


def _mean_one(raw: np.ndarray) -> np.ndarray:
    return raw * (len(raw) / raw.sum())


def inverse_frequency_weights(counts) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 1):
        raise ConfigError("every class needs at least one sample for re-weighting")
    return _mean_one(1.0 / counts)


def effective_number(n, beta: float):
    """(1 - beta**n) / (1 - beta)."""
    return (1.0 - np.power(beta, n)) / (1.0 - beta)


def class_balanced_weights(counts, beta: float) -> np.ndarray:
    if not 0 <= beta < 1:
        raise ConfigError(f"beta must lie in [0, 1), got {beta}")
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 1):
        raise ConfigError("every class needs at least one sample")
    return _mean_one(1.0 / effective_number(counts, beta))


def focal_loss(logits, label: int, gamma: float = 2.0):
    """``-(1 - p_y)**gamma * log p_y`` and its gradient w.r.t. the logits."""
    loss, grad = batch_focal(np.atleast_2d(logits), np.array([label]), gamma)
    return float(loss), grad[0]


def batch_focal(logits, labels, gamma: float, sample_weights=None):
    """Mean focal loss over a batch; gradient already divided by batch size."""
    if gamma < 0:
        raise ConfigError("gamma must be >= 0")
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = z.shape
    if k < 2 or labels.min() < 0 or labels.max() >= k:
        raise InputError("label out of range")
    rows = np.arange(n)
    logp = log_softmax(z)
    p = np.exp(logp)
    lp_y = logp[rows, labels]
    p_y = p[rows, labels]
    one_minus = 1.0 - p_y
    mod = one_minus**gamma
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    loss = (w * mod * -lp_y).sum() / n

    if gamma > 0:
        dmod = gamma * np.power(np.maximum(one_minus, 1e-300), gamma - 1.0)
    else:
        dmod = np.zeros(n)
    # dL/dz_j = (dmod*log p_y*p_y - mod) * (onehot_j - p_j)
    coef = dmod * lp_y * p_y - mod
    onehot = np.zeros_like(p)
    onehot[rows, labels] = 1.0
    grad = (coef * w / n)[:, None] * (onehot - p)
    return float(loss), grad
