"""Contrastive (InfoNCE) pretraining of the encoder on unlabeled vectors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError, UsageError
from .nn import AdamState, NetworkConfig, NetworkParams, adam_step, backward, forward, init_params


@dataclass(frozen=True)
class AugmentationConfig:
    noise_sigma: float = 0.1
    scale_jitter: tuple[float, float] = (0.9, 1.1)
    mask_prob: float = 0.1

    def __post_init__(self):
        lo, hi = self.scale_jitter
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if not 0 < lo <= 1 <= hi:
            raise ConfigError(f"scale_jitter must satisfy 0 < lo <= 1 <= hi, got {self.scale_jitter}")
        if not 0 <= self.mask_prob < 1:
            raise ConfigError("mask_prob must be in [0, 1)")


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.5
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    proj_dim: int = 16
    # negatives_per_anchor is implied by the batch: 2 * (batch_size - 1)

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0")
        if self.epochs < 0 or self.lr <= 0 or self.proj_dim < 1:
            raise ConfigError("epochs >= 0, lr > 0, proj_dim >= 1 required")

    @property
    def negatives_per_anchor(self) -> int:
        return 2 * (self.batch_size - 1)


def augment(feature, cfg: AugmentationConfig, rng, feature_std=1.0) -> np.ndarray:
    """One stochastic view: ``mask * (scale * x + noise)``.

    Works on a single vector or a batch (one scale per row). Noise std is
    ``cfg.noise_sigma * feature_std`` per coordinate.
    """
    x = np.asarray(feature, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InputError("non-finite feature passed to augment")
    rng = np.random.default_rng(rng)
    batch = x if x.ndim == 2 else x[None, :]
    n, d = batch.shape
    lo, hi = cfg.scale_jitter
    scale = rng.uniform(lo, hi, size=(n, 1)) if hi > lo else np.full((n, 1), lo)
    noise = rng.standard_normal((n, d)) * (cfg.noise_sigma * np.asarray(feature_std))
    keep = rng.random((n, d)) >= cfg.mask_prob
    out = keep * (scale * batch + noise)
    return out if x.ndim == 2 else out[0]


def info_nce_loss(anchor, positive, negatives, T: float):
    """Single-anchor InfoNCE on raw (unnormalized) embeddings.

    Returns ``(loss, d_anchor, d_positive, d_negatives)``.
    """
    v = np.asarray(anchor, dtype=np.float64)
    vp = np.asarray(positive, dtype=np.float64)
    vn = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if vn.size == 0:
        raise UsageError("InfoNCE needs at least one negative")
    if vp.shape != v.shape or vn.shape[1] != v.shape[0]:
        raise UsageError("embedding dimensions differ")
    s = np.concatenate(([v @ vp], vn @ v)) / T
    m = s.max()
    # sorted so the sum does not depend on the order negatives arrive in
    lse = m + np.log(np.sort(np.exp(s - m)).sum())
    loss = float(lse - s[0])
    p = np.exp(s - lse)
    g = p.copy()
    g[0] -= 1.0
    d_anchor = (g[0] * vp + g[1:] @ vn) / T
    d_pos = g[0] * v / T
    d_neg = np.outer(g[1:], v) / T
    return loss, d_anchor, d_pos, d_neg


def nt_xent(z1: np.ndarray, z2: np.ndarray, T: float):
    """Batched symmetric InfoNCE over two views.

    Every row is an anchor; its positive is the other view of the same sample
    and its negatives are both views of every other sample. Inputs are
    L2-normalized here. Returns ``(mean_loss, d_z1, d_z2)`` w.r.t. the raw inputs.
    """
    n = z1.shape[0]
    if n < 2:
        raise UsageError("need at least 2 samples for in-batch negatives")
    h = np.concatenate([z1, z2])
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    norms = np.maximum(norms, 1e-12)
    u = h / norms
    s = (u @ u.T) / T
    np.fill_diagonal(s, -np.inf)
    pos = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
    rows = np.arange(2 * n)
    m = s.max(axis=1, keepdims=True)
    e = np.exp(s - m)
    lse = m[:, 0] + np.log(e.sum(axis=1))
    loss = float(np.mean(lse - s[rows, pos]))

    g = e / e.sum(axis=1, keepdims=True)
    g[rows, pos] -= 1.0
    g /= 2 * n
    du = ((g + g.T) @ u) / T
    dh = (du - u * np.sum(u * du, axis=1, keepdims=True)) / norms
    return loss, dh[:n], dh[n:]


@dataclass
class PretrainResult:
    encoder: NetworkParams  # the hidden layers only; embeddings are their ReLU output
    projection: NetworkParams
    epoch_losses: list[float] = field(default_factory=list)


def ssl_network(net_config: NetworkConfig, proj_dim: int) -> NetworkConfig:
    """Encoder dims from ``net_config`` (all but the classifier layer) plus a projection."""
    enc = net_config.layer_dims[:-1]
    return NetworkConfig(enc + (proj_dim,), dropout_rate=0.0)


def encode(encoder: NetworkParams, x: np.ndarray) -> np.ndarray:
    """ReLU after every encoder layer; this is the representation f(x)."""
    a = np.asarray(x, dtype=np.float64)
    for w, b in zip(encoder.weights, encoder.biases):
        a = np.maximum(a @ w + b, 0.0)
    return a


def pretrain_encoder(
    features: np.ndarray,
    net_config: NetworkConfig,
    ccfg: ContrastiveConfig = ContrastiveConfig(),
    acfg: AugmentationConfig = AugmentationConfig(),
    seed: int = 0,
) -> PretrainResult:
    """Train encoder + projection head with in-batch InfoNCE; labels are never seen."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise InputError("pretraining needs a non-empty (n, d) feature matrix")
    if ccfg.batch_size < 2:
        raise ConfigError("batch_size must be >= 2 so every anchor has negatives")
    cfg = ssl_network(net_config, ccfg.proj_dim)
    rng = np.random.default_rng([seed, 11])
    params = init_params(cfg, rng)
    state = AdamState.fresh(params, lr=ccfg.lr)
    feature_std = x.std(axis=0) + 1e-12
    losses = []
    n = len(x)
    bs = min(ccfg.batch_size, n)
    for _ in range(ccfg.epochs):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            if len(idx) < 2:
                continue
            xb = x[idx]
            v1 = augment(xb, acfg, rng, feature_std)
            v2 = augment(xb, acfg, rng, feature_std)
            out, cache = forward(cfg, params, np.concatenate([v1, v2]))
            loss, d1, d2 = nt_xent(out[: len(idx)], out[len(idx):], ccfg.temperature)
            grads = backward(cfg, params, cache, np.concatenate([d1, d2]))
            params, state = adam_step(params, grads, state)
            total += loss
            batches += 1
        losses.append(total / max(batches, 1))
    n_enc = cfg.n_layers - 1
    encoder = NetworkParams(params.weights[:n_enc], params.biases[:n_enc])
    projection = NetworkParams(params.weights[n_enc:], params.biases[n_enc:])
    return PretrainResult(encoder, projection, losses)
