import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flexsample.errors import ConfigError, NumericalError, UsageError
from flexsample.nn import (AdamState, NetworkConfig, NetworkParams, adam_step, backward,
                           batch_cross_entropy, forward, init_params, softmax,
                           softmax_cross_entropy)


def _params(ws, bs):
    return NetworkParams(tuple(np.asarray(w, float) for w in ws), tuple(np.asarray(b, float) for b in bs))


def test_hand_computed_2_3_2():
    cfg = NetworkConfig((2, 3, 2), dropout_rate=0.0)
    p = _params([[[1, 0, 2], [0.5, -1, 1]], [[1, -1], [2, 0], [0, 1]]],
                [[0, -2, 0.5], [0.1, -0.2]])
    out, cache = forward(cfg, p, np.array([1.0, -1.0]))
    # hidden pre-acts (0.5, -1, 1.5) -> relu (0.5, 0, 1.5)
    np.testing.assert_allclose(cache.hidden[0], [[0.5, 0.0, 1.5]])
    np.testing.assert_allclose(out, [[0.6, 0.8]], atol=1e-15)


def test_zero_weights_give_zero_logits():
    cfg = NetworkConfig((4, 5, 3))
    p = init_params(cfg, 0)
    z = NetworkParams(tuple(np.zeros_like(w) for w in p.weights), tuple(np.zeros_like(b) for b in p.biases))
    out, _ = forward(cfg, z, np.ones((2, 4)))
    assert np.all(out == 0)


def test_single_linear_layer_is_identity():
    cfg = NetworkConfig((3, 3))
    p = _params([np.eye(3)], [np.zeros(3)])
    x = np.array([[1.0, -2.0, 3.5]])
    out, _ = forward(cfg, p, x)
    np.testing.assert_array_equal(out, x)


def _loss_and_grad(cfg, p, x, y, seed):
    logits, cache = forward(cfg, p, x, mode="train", mask_seed=seed)
    loss, g = batch_cross_entropy(logits, y)
    return loss, backward(cfg, p, cache, g)


@pytest.mark.parametrize("case", range(12))
def test_backward_matches_finite_differences(case):
    rng = np.random.default_rng(case)
    depth = int(rng.integers(1, 4))
    dims = tuple(int(v) for v in rng.integers(2, 6, size=depth + 1))
    cfg = NetworkConfig(dims, dropout_rate=float(rng.choice([0.0, 0.3])))
    p = init_params(cfg, rng)
    # non-zero biases keep pre-activations off the ReLU kink at exactly 0
    p = NetworkParams(p.weights, tuple(rng.normal(0, 0.5, b.shape) for b in p.biases))
    x = rng.standard_normal((5, dims[0]))
    y = rng.integers(0, dims[-1], size=5)
    _, grads = _loss_and_grad(cfg, p, x, y, seed=case)
    eps = 1e-5
    arrays = p.arrays()
    g_arrays = grads.arrays()
    worst = 0.0
    for i, a in enumerate(arrays):
        for idx in np.ndindex(a.shape):
            plus = [b.copy() for b in arrays]
            minus = [b.copy() for b in arrays]
            plus[i][idx] += eps
            minus[i][idx] -= eps
            lp, _ = _loss_and_grad(cfg, NetworkParams.from_arrays(plus), x, y, case)
            lm, _ = _loss_and_grad(cfg, NetworkParams.from_arrays(minus), x, y, case)
            fd = (lp - lm) / (2 * eps)
            an = g_arrays[i][idx]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    assert worst < 1e-4


def test_backward_rejects_stale_cache():
    cfg = NetworkConfig((3, 4, 2))
    p = init_params(cfg, 1)
    _, cache = forward(cfg, p, np.ones((1, 3)))
    with pytest.raises(UsageError):
        backward(cfg, p.copy(), cache, np.ones((1, 2)))


def test_shape_and_value_errors():
    with pytest.raises(ConfigError):
        NetworkConfig((3,))
    with pytest.raises(ConfigError):
        NetworkConfig((3, 2), dropout_rate=1.0)
    cfg = NetworkConfig((3, 2))
    with pytest.raises(ConfigError):
        forward(cfg, init_params(cfg, 0), np.ones((1, 4)))


def test_cross_entropy_examples():
    loss, g = softmax_cross_entropy(np.zeros(4), 0)
    assert loss == pytest.approx(math.log(4), abs=1e-12)
    np.testing.assert_allclose(g, [-0.75, 0.25, 0.25, 0.25])
    loss, _ = softmax_cross_entropy(np.array([2.0, 0.0]), 0)
    assert loss == pytest.approx(math.log1p(math.exp(-2)), abs=1e-12)  # 0.126928...


def test_softmax_is_stable_for_huge_logits():
    p = softmax(np.array([1000.0, 0.0, -1000.0]))
    assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.data())
def test_softmax_and_ce_gradient_properties(logits, data):
    z = np.array(logits)
    y = data.draw(st.integers(0, len(z) - 1))
    assert softmax(z).sum() == pytest.approx(1.0, abs=1e-12)
    loss, g = softmax_cross_entropy(z, y)
    assert loss >= 0
    assert abs(g.sum()) < 1e-12


def _adam_oracle(p, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam written out longhand."""
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
        out.append(p)
    return out


def test_adam_matches_scalar_oracle():
    p = NetworkParams((np.array([[0.5]]),), (np.array([-1.0]),))
    state = AdamState.fresh(p, lr=1e-3)
    seq = [0.3, -1.2, 0.05, 2.0]
    expect_w = _adam_oracle(0.5, seq)
    expect_b = _adam_oracle(-1.0, [2 * g for g in seq])
    for t, g in enumerate(seq):
        grads = NetworkParams((np.array([[g]]),), (np.array([2 * g]),))
        p, state = adam_step(p, grads, state)
        assert abs(p.weights[0][0, 0] - expect_w[t]) < 1e-12
        assert abs(p.biases[0][0] - expect_b[t]) < 1e-12


def test_adam_zero_gradient_is_noop_and_first_step_is_lr():
    cfg = NetworkConfig((3, 4, 2))
    p = init_params(cfg, 0)
    zeros = NetworkParams.from_arrays([np.zeros_like(a) for a in p.arrays()])
    q, _ = adam_step(p, zeros, AdamState.fresh(p))
    for a, b in zip(p.arrays(), q.arrays()):
        np.testing.assert_array_equal(a, b)
    ones = NetworkParams.from_arrays([np.full_like(a, 3.0) for a in p.arrays()])
    q, _ = adam_step(p, ones, AdamState.fresh(p, lr=1e-2))
    for a, b in zip(p.arrays(), q.arrays()):
        np.testing.assert_allclose(a - b, 1e-2, rtol=1e-6)


def test_adam_rejects_nan():
    p = NetworkParams((np.zeros((1, 1)),), (np.zeros(1),))
    bad = NetworkParams((np.full((1, 1), np.nan),), (np.zeros(1),))
    with pytest.raises(NumericalError):
        adam_step(p, bad, AdamState.fresh(p))


def test_inverted_dropout_preserves_mean():
    # one hidden unit that is always 1; the output reads the scaled mask directly
    cfg = NetworkConfig((1, 1, 1), dropout_rate=0.3)
    p = _params([[[1.0]], [[1.0]]], [[0.0], [0.0]])
    out, _ = forward(cfg, p, np.ones((10_000, 1)), mode="train", mask_seed=3)
    keep = 0.7
    se = math.sqrt(keep * (1 - keep)) / keep / math.sqrt(10_000)
    assert abs(out.mean() - 1.0) < 3 * se


def test_eval_mode_is_deterministic_and_train_mode_seeded():
    cfg = NetworkConfig((4, 8, 3), dropout_rate=0.5)
    p = init_params(cfg, 5)
    x = np.random.default_rng(0).standard_normal((6, 4))
    a, _ = forward(cfg, p, x)
    b, _ = forward(cfg, p, x, mask_seed=123)
    np.testing.assert_array_equal(a, b)
    c, _ = forward(cfg, p, x, mode="train", mask_seed=9)
    d, _ = forward(cfg, p, x, mode="train", mask_seed=9)
    np.testing.assert_array_equal(c, d)


@settings(max_examples=25)
@given(st.integers(0, 2**31 - 1))
def test_init_is_seed_deterministic(seed):
    cfg = NetworkConfig((5, 7, 3))
    for a, b in zip(init_params(cfg, seed).arrays(), init_params(cfg, seed).arrays()):
        np.testing.assert_array_equal(a, b)
