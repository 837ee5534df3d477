"""Analytic gradients vs central finite differences, every parameter."""

import numpy as np
import pytest

from qasir.finetune import (
    LossConfig,
    batch_forward_backward,
    batch_loss,
    init_params,
)

FD_STEP = 1e-5
REL_TOL = 1e-4


def finite_difference_grads(params, loss_fn, step=FD_STEP):
    """Independent oracle: central differences over every scalar entry."""
    grads = {}
    for name, arr in params.named():
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = loss_fn()
            flat[i] = orig - step
            lo = loss_fn()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        grads[name] = grad
    return grads


def relative_error(a, b):
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-4)
    return np.abs(a - b) / scale


def _batch(rng, dim=8, k=3, batch=4):
    mats = [rng.standard_normal((k, dim)) for _ in range(batch)]
    mats = [m / np.linalg.norm(m, axis=1, keepdims=True) for m in mats]
    queries = rng.standard_normal((batch, dim))
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)
    return mats, queries


@pytest.mark.parametrize("mode", ["infonce", "literal"])
def test_every_parameter_matches_finite_differences(mode):
    rng = np.random.default_rng(42)
    dim, hidden, k, heads, batch = 8, 6, 3, 2, 4
    params = init_params(rng, dim, hidden=hidden, heads=heads, ff_dim=4 * dim,
                         zero_residual=False)
    mats, queries = _batch(rng, dim=dim, k=k, batch=batch)
    config = LossConfig(mode=mode, temperature=0.5)

    _, analytic = batch_forward_backward(params, mats, queries, config)
    numeric = finite_difference_grads(
        params, lambda: batch_loss(params, mats, queries, config)
    )

    assert set(analytic) == set(numeric)
    for name in sorted(analytic):
        err = relative_error(analytic[name], numeric[name])
        assert err.max() <= REL_TOL, f"{name}: max rel err {err.max():.2e}"


@pytest.mark.parametrize("mode", ["infonce", "literal"])
def test_gradcheck_without_temporal(mode):
    rng = np.random.default_rng(7)
    params = init_params(rng, 6, hidden=5, temporal=False, zero_residual=False)
    mats, queries = _batch(rng, dim=6, k=2, batch=3)
    config = LossConfig(mode=mode)
    _, analytic = batch_forward_backward(params, mats, queries, config)
    numeric = finite_difference_grads(
        params, lambda: batch_loss(params, mats, queries, config)
    )
    for name in sorted(analytic):
        err = relative_error(analytic[name], numeric[name])
        assert err.max() <= REL_TOL, f"{name}: max rel err {err.max():.2e}"


def test_gradcheck_with_three_layer_adapters():
    rng = np.random.default_rng(23)
    dim = 6
    params = init_params(rng, dim, hidden=5, heads=2, ff_dim=2 * dim,
                         zero_residual=False, adapter_depth=3)
    assert len(params.vision.mid) == 1
    mats, queries = _batch(rng, dim=dim, k=2, batch=3)
    config = LossConfig(mode="infonce")
    _, analytic = batch_forward_backward(params, mats, queries, config)
    numeric = finite_difference_grads(
        params, lambda: batch_loss(params, mats, queries, config)
    )
    assert "vision/Wm1" in analytic
    for name in sorted(analytic):
        err = relative_error(analytic[name], numeric[name])
        assert err.max() <= REL_TOL, f"{name}: max rel err {err.max():.2e}"


def test_gradcheck_wider_configuration():
    # different head geometry (dh=4 with H=4) and a bigger batch
    rng = np.random.default_rng(77)
    dim, hidden, heads, batch = 16, 10, 4, 6
    params = init_params(rng, dim, hidden=hidden, heads=heads, ff_dim=2 * dim,
                         zero_residual=False)
    mats = [rng.standard_normal((int(rng.integers(2, 6)), dim)) for _ in range(batch)]
    mats = [m / np.linalg.norm(m, axis=1, keepdims=True) for m in mats]
    queries = rng.standard_normal((batch, dim))
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)
    config = LossConfig(mode="infonce", temperature=0.07)
    _, analytic = batch_forward_backward(params, mats, queries, config)
    numeric = finite_difference_grads(
        params, lambda: batch_loss(params, mats, queries, config)
    )
    for name in sorted(analytic):
        err = relative_error(analytic[name], numeric[name])
        assert err.max() <= REL_TOL, f"{name}: max rel err {err.max():.2e}"


def test_gradcheck_with_ragged_batch():
    rng = np.random.default_rng(11)
    dim = 6
    params = init_params(rng, dim, hidden=5, heads=2, ff_dim=2 * dim, zero_residual=False)
    mats = [rng.standard_normal((k, dim)) for k in (1, 3, 2)]
    queries = rng.standard_normal((3, dim))
    config = LossConfig(mode="infonce")
    _, analytic = batch_forward_backward(params, mats, queries, config)
    numeric = finite_difference_grads(
        params, lambda: batch_loss(params, mats, queries, config)
    )
    for name in sorted(analytic):
        err = relative_error(analytic[name], numeric[name])
        assert err.max() <= REL_TOL, f"{name}: max rel err {err.max():.2e}"
