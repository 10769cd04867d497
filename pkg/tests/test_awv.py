"""View fusion: pooling, attention weights, and their algebra."""

import numpy as np
import pytest

from pcnn import tensor as T
from pcnn.awv import (
    AWV,
    apply_view_weights,
    attention_weights,
    max_pool_state,
    pool_views,
)
from pcnn.tensor import Tensor


def test_pool_views_means_each_view():
    # view 0 patches are 1,2,3,4 -> 2.5; view 1 is constant 7
    features = Tensor(np.array([[1.0], [2.0], [3.0], [4.0],
                                [7.0], [7.0], [7.0], [7.0]]))
    pooled = pool_views(features, (2, 1, 2))
    assert np.array_equal(pooled.data, [[2.5], [7.0]])


def test_pool_views_constant_view_is_identity():
    rng = np.random.default_rng(31)
    vals = rng.normal(size=(3, 5))
    features = Tensor(np.repeat(vals, 4, axis=0))  # each view: 4 equal patches
    pooled = pool_views(features, (2, 5, 3))
    np.testing.assert_allclose(pooled.data, vals, rtol=0, atol=1e-15)


def test_identical_views_weight_uniformly():
    f = Tensor(np.tile([[0.4, -1.2, 2.0]], (4, 1)))
    state = attention_weights(f)
    np.testing.assert_allclose(state.alpha.data, np.full(4, 0.25),
                               rtol=0, atol=1e-12)
    np.testing.assert_allclose(state.g_fused.data, f.data[0],
                               rtol=0, atol=1e-12)


def test_score_softmax_closed_form():
    # the score-to-weight map on (ln 2, 0) gives (2/3, 1/3)
    alpha = T.softmax(Tensor(np.array([np.log(2.0), 0.0])))
    np.testing.assert_allclose(alpha.data, [2 / 3, 1 / 3], rtol=1e-12)


def test_forced_one_hot_weights_pick_a_view():
    rng = np.random.default_rng(32)
    f = Tensor(rng.normal(size=(3, 4)))
    state = apply_view_weights(f, Tensor(np.array([1.0, 0.0, 0.0])))
    assert np.array_equal(state.g_fused.data, f.data[0])
    assert np.array_equal(state.f_weighted.data[1:], np.zeros((2, 4)))


def test_weights_normalized_and_positive():
    for seed in range(25):
        rng = np.random.default_rng([seed, 613])
        f = Tensor(rng.normal(size=(int(rng.integers(2, 9)), 6)))
        state = attention_weights(f)
        assert abs(state.alpha.data.sum() - 1.0) < 1e-10
        assert (state.alpha.data > 0.0).all()
        assert (state.alpha.data < 1.0).all()


def test_positive_rescale_leaves_weights():
    for seed in range(25):
        rng = np.random.default_rng([seed, 677])
        f = rng.normal(size=(5, 7))
        c = float(rng.uniform(0.1, 10.0))
        base = attention_weights(Tensor(f))
        scaled = attention_weights(Tensor(c * f))
        np.testing.assert_allclose(scaled.scores.data, base.scores.data,
                                   rtol=0, atol=1e-10)
        np.testing.assert_allclose(scaled.alpha.data, base.alpha.data,
                                   rtol=0, atol=1e-10)
        np.testing.assert_allclose(scaled.g_fused.data, c * base.g_fused.data,
                                   rtol=1e-10)


def test_g_is_channelwise_max():
    rng = np.random.default_rng(33)
    f = rng.normal(size=(6, 4))
    state = attention_weights(Tensor(f))
    assert np.array_equal(state.g.data, f.max(axis=0))


def test_cyclic_shift_rotates_weights():
    # rolling the view order rolls alpha and leaves the fusion feature;
    # the circular conv inside the layer is shift equivariant by design
    rng = np.random.default_rng(34)
    layer = AWV(5, rng)
    f = rng.normal(size=(6, 5))
    with T.no_grad():
        base = layer.forward(Tensor(f))
        rolled = layer.forward(Tensor(np.roll(f, 2, axis=0)))
    np.testing.assert_allclose(rolled.alpha.data, np.roll(base.alpha.data, 2),
                               rtol=0, atol=1e-12)
    np.testing.assert_allclose(rolled.g_fused.data, base.g_fused.data,
                               rtol=0, atol=1e-12)


def test_disabled_fusion_is_plain_max():
    rng = np.random.default_rng(35)
    f = rng.normal(size=(4, 6))
    state = max_pool_state(Tensor(f))
    assert state.alpha is None
    assert state.scores is None
    assert np.array_equal(state.g.data, f.max(axis=0))
    assert state.g_fused is state.g
    assert np.array_equal(state.f_weighted.data, f)


def test_layer_shapes_and_mixing():
    rng = np.random.default_rng(36)
    layer = AWV(4, rng)
    f = rng.normal(size=(5, 4))
    state = layer.forward(Tensor(f))
    assert state.alpha.shape == (5,)
    assert state.f_weighted.shape == (5, 4)
    assert state.g_fused.shape == (4,)
    assert abs(state.alpha.data.sum() - 1.0) < 1e-10
    # near-identity mixing keeps attention close to the unmixed weights
    direct = attention_weights(Tensor(f))
    np.testing.assert_allclose(state.alpha.data, direct.alpha.data, atol=0.05)


def test_weighted_sum_matches_manual():
    rng = np.random.default_rng(37)
    f = rng.normal(size=(4, 3))
    state = attention_weights(Tensor(f))
    np.testing.assert_allclose(
        state.g_fused.data, state.alpha.data @ f, rtol=0, atol=1e-12
    )
    np.testing.assert_allclose(
        state.f_weighted.data, state.alpha.data[:, None] * f,
        rtol=0, atol=1e-12,
    )


def test_attention_gradients():
    from pcnn.gradcheck import run_check

    for seed in range(3):
        assert run_check("awv", seed=seed).max_rel_err < 1e-5
