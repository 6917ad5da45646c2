"""Small fully-connected network with hand-written forward/backward passes.

Used both as the contrastive encoder and as the classifier. Hidden layers use
ReLU followed by (inverted) dropout; the last layer is linear. Everything is
float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError, NumericalError, UsageError


@dataclass(frozen=True)
class NetworkConfig:
    layer_dims: tuple[int, ...]
    activation: str = "relu"
    dropout_rate: float = 0.2

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ConfigError("layer_dims needs at least an input and an output size")
        if any(d <= 0 for d in dims):
            raise ConfigError(f"layer_dims must be positive, got {dims}")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1


@dataclass(frozen=True)
class NetworkParams:
    weights: tuple[np.ndarray, ...]  # weights[l] has shape (dims[l], dims[l+1])
    biases: tuple[np.ndarray, ...]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "NetworkParams":
        arrays = list(arrays)
        return cls(tuple(arrays[0::2]), tuple(arrays[1::2]))

    def copy(self) -> "NetworkParams":
        return NetworkParams.from_arrays(a.copy() for a in self.arrays())


@dataclass
class ForwardCache:
    params: NetworkParams
    inputs: list[np.ndarray]  # input to each layer (post-dropout for hidden ones)
    pre_acts: list[np.ndarray]  # z for each hidden layer
    masks: list[np.ndarray | None]  # scaled dropout masks per hidden layer
    hidden: list[np.ndarray] = field(default_factory=list)  # post-relu, pre-dropout

    @property
    def embedding(self) -> np.ndarray:
        """Activation of the last hidden layer (before dropout)."""
        if not self.hidden:
            raise UsageError("network has no hidden layer")
        return self.hidden[-1]


def init_params(config: NetworkConfig, rng) -> NetworkParams:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(rng)
    ws, bs = [], []
    for fan_in, fan_out in zip(config.layer_dims[:-1], config.layer_dims[1:]):
        ws.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return NetworkParams(tuple(ws), tuple(bs))


def check_params(config: NetworkConfig, params: NetworkParams) -> None:
    if len(params.weights) != config.n_layers or len(params.biases) != config.n_layers:
        raise ConfigError(
            f"expected {config.n_layers} layers, params have {len(params.weights)}"
        )
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        shape = (config.layer_dims[l], config.layer_dims[l + 1])
        if w.shape != shape or b.shape != (shape[1],):
            raise ConfigError(
                f"layer {l}: expected W{shape} b({shape[1]},), got W{w.shape} b{b.shape}"
            )


def forward(
    config: NetworkConfig,
    params: NetworkParams,
    x: np.ndarray,
    mode: str = "eval",
    mask_seed=None,
) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on a batch ``x`` of shape (n, d).

    In ``"train"`` mode hidden activations are multiplied by a Bernoulli keep
    mask scaled by ``1 / (1 - dropout_rate)``. ``mask_seed`` may be an int or a
    ``numpy.random.Generator``; ``"eval"`` mode never touches it.
    """
    if mode not in ("train", "eval"):
        raise UsageError(f"mode must be 'train' or 'eval', got {mode!r}")
    check_params(config, params)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != config.layer_dims[0]:
        raise ConfigError(
            f"input has shape {x.shape}, expected (n, {config.layer_dims[0]})"
        )
    if not np.all(np.isfinite(x)):
        raise InputError("non-finite values in network input")

    p = config.dropout_rate
    use_dropout = mode == "train" and p > 0.0
    rng = np.random.default_rng(mask_seed) if use_dropout else None

    cache = ForwardCache(params=params, inputs=[], pre_acts=[], masks=[])
    a = x
    last = config.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(a)
        z = a @ w + b
        if l == last:
            return z, cache
        cache.pre_acts.append(z)
        h = np.maximum(z, 0.0)
        cache.hidden.append(h)
        if use_dropout:
            mask = (rng.random(h.shape) >= p) / (1.0 - p)
            cache.masks.append(mask)
            a = h * mask
        else:
            cache.masks.append(None)
            a = h
    raise AssertionError("unreachable")


def backward(
    config: NetworkConfig,
    params: NetworkParams,
    cache: ForwardCache,
    output_gradient: np.ndarray,
) -> NetworkParams:
    """Gradients of ``sum(output * output_gradient)`` w.r.t. every parameter.

    Returned in a ``NetworkParams`` container with the same layout as ``params``.
    """
    if cache.params is not params:
        raise UsageError("cache was produced by a different params object")
    if len(cache.inputs) != config.n_layers:
        raise UsageError("cache does not match network depth")
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    n = cache.inputs[0].shape[0]
    if g.shape != (n, config.layer_dims[-1]):
        raise UsageError(f"output gradient shape {g.shape} != {(n, config.layer_dims[-1])}")

    dws: list[np.ndarray] = [None] * config.n_layers  # type: ignore[list-item]
    dbs: list[np.ndarray] = [None] * config.n_layers  # type: ignore[list-item]
    for l in range(config.n_layers - 1, -1, -1):
        dws[l] = cache.inputs[l].T @ g
        dbs[l] = g.sum(axis=0)
        if l == 0:
            break
        g = g @ params.weights[l].T
        mask = cache.masks[l - 1]
        if mask is not None:
            g = g * mask
        g = g * (cache.pre_acts[l - 1] > 0.0)
    return NetworkParams(tuple(dws), tuple(dbs))


def input_gradient(params: NetworkParams, cache: ForwardCache, output_gradient) -> np.ndarray:
    """Gradient w.r.t. the network input (used only by tests and probes)."""
    g = np.atleast_2d(np.asarray(output_gradient, dtype=np.float64))
    for l in range(len(params.weights) - 1, -1, -1):
        g = g @ params.weights[l].T
        if l == 0:
            return g
        mask = cache.masks[l - 1]
        if mask is not None:
            g = g * mask
        g = g * (cache.pre_acts[l - 1] > 0.0)
    return g


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits, label: int, class_weight: float = 1.0):
    """Loss and logit-gradient for a single example.

    Returns ``(loss, grad)`` with ``grad = w * (softmax(logits) - onehot(label))``.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] < 2:
        raise InputError(f"logits must be a vector of length >= 2, got shape {z.shape}")
    if not 0 <= int(label) < z.shape[0] or int(label) != label:
        raise InputError(f"label {label} out of range for {z.shape[0]} classes")
    if not class_weight > 0:
        raise InputError(f"class_weight must be positive, got {class_weight}")
    logp = log_softmax(z)
    grad = np.exp(logp)
    grad[label] -= 1.0
    return float(-class_weight * logp[label]), class_weight * grad


def batch_cross_entropy(logits: np.ndarray, labels: np.ndarray, sample_weights=None):
    """Mean (optionally weighted) cross-entropy over a batch.

    Returns ``(mean_loss, grad_logits)`` where the gradient is already divided
    by the batch size.
    """
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise InputError("label out of range")
    logp = log_softmax(logits)
    rows = np.arange(n)
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    loss = -(w * logp[rows, labels]).sum() / n
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad *= (w / n)[:, None]
    return float(loss), grad


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: NetworkParams, lr: float = 3e-4, **kw) -> "AdamState":
        arrays = params.arrays()
        return cls(
            m=[np.zeros_like(a) for a in arrays],
            v=[np.zeros_like(a) for a in arrays],
            lr=lr,
            **kw,
        )


def adam_step(params: NetworkParams, grads: NetworkParams, state: AdamState):
    """One bias-corrected Adam update. Returns new ``(params, state)``."""
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if len(p_arrays) != len(g_arrays) or len(p_arrays) != len(state.m):
        raise UsageError("params, grads and optimizer state disagree in length")
    for p, g, m in zip(p_arrays, g_arrays, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise UsageError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient passed to adam_step")

    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)
    return NetworkParams.from_arrays(new_p), new_state
