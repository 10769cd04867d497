"""Value and invariant tests for the autodiff tensor ops."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from pcnn import tensor as T
from pcnn.tensor import Parameter, ShapeError, Tensor


def test_matmul_identity():
    out = T.matmul(Tensor(np.eye(2)), Tensor([[1.0, 2.0], [3.0, 4.0]]))
    npt.assert_array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])


def test_matmul_hand_value():
    # 1*3 + 2*4 = 11
    out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    npt.assert_array_equal(out.data, [[11.0]])


def test_matmul_zeros_annihilate():
    rng = np.random.default_rng(0)
    out = T.matmul(Tensor(np.zeros((2, 3))), Tensor(rng.normal(size=(3, 4))))
    npt.assert_array_equal(out.data, np.zeros((2, 4)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 4\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


def test_matmul_backward_values():
    a = Parameter([[1.0, 2.0]])
    b = Parameter([[3.0], [4.0]])
    T.matmul(a, b).backward()
    npt.assert_array_equal(a.grad, [[3.0, 4.0]])  # g @ b.T with g = 1
    npt.assert_array_equal(b.grad, [[1.0], [2.0]])


def test_leaky_relu_values():
    out = T.leaky_relu(Tensor([1.0, -1.0]), 0.2)
    npt.assert_allclose(out.data, [1.0, -0.2], rtol=0, atol=0)


def test_leaky_relu_zero_takes_slope_gradient():
    x = Parameter([0.0])
    y = T.leaky_relu(x, 0.2)
    assert y.data[0] == 0.0
    T.sum_over_axis(y, 0).backward()
    npt.assert_array_equal(x.grad, [0.2])


def test_leaky_relu_slope_validated():
    with pytest.raises(ValueError):
        T.leaky_relu(Tensor([1.0]), 1.5)


def test_batch_norm_symmetric_pair():
    # mean 0 and variance 1 by construction, so output is x up to eps
    x = Tensor([[-1.0], [1.0]])
    out = T.batch_norm(
        x, Tensor([1.0]), Tensor([0.0]), np.zeros(1), np.ones(1), train=True
    )
    npt.assert_allclose(out.data, [[-1.0], [1.0]], atol=1e-5)


def test_batch_norm_constant_column_shifts_to_beta():
    x = Tensor(np.full((4, 1), 7.25))
    out = T.batch_norm(
        x, Tensor([1.0]), Tensor([5.0]), np.zeros(1), np.ones(1), train=True
    )
    npt.assert_array_equal(out.data, np.full((4, 1), 5.0))


def test_batch_norm_eval_is_identity_with_unit_running_stats():
    x = Tensor([[0.5, -0.25], [1.5, 0.75]])
    out = T.batch_norm(
        x, Tensor(np.ones(2)), Tensor(np.zeros(2)),
        np.zeros(2), np.ones(2), train=False,
    )
    npt.assert_allclose(out.data, x.data, atol=1e-5)


def test_batch_norm_train_rejects_single_row():
    with pytest.raises(ShapeError):
        T.batch_norm(
            Tensor([[1.0]]), Tensor([1.0]), Tensor([0.0]),
            np.zeros(1), np.ones(1), train=True,
        )


def test_batch_norm_running_stats_update():
    # batch mean 0, biased var 1, unbiased var 2:
    # mean <- 0.9*0 + 0.1*0 = 0, var <- 0.9*1 + 0.1*2 = 1.1
    rm, rv = np.zeros(1), np.ones(1)
    T.batch_norm(
        Tensor([[-1.0], [1.0]]), Tensor([1.0]), Tensor([0.0]), rm, rv, train=True
    )
    npt.assert_allclose(rm, [0.0], atol=0)
    npt.assert_allclose(rv, [1.1], rtol=1e-12)


def test_max_over_axis_columnwise():
    values, argmax = T.max_over_axis(Tensor([[1.0, 5.0], [4.0, 2.0]]), axis=0)
    npt.assert_array_equal(values.data, [4.0, 5.0])
    npt.assert_array_equal(argmax, [1, 0])


def test_max_over_single_slice_is_identity():
    values, argmax = T.max_over_axis(Tensor([[3.0], [7.0]]), axis=1)
    npt.assert_array_equal(values.data, [3.0, 7.0])
    npt.assert_array_equal(argmax, [0, 0])


def test_max_tie_breaks_to_lowest_index():
    values, argmax = T.max_over_axis(Tensor([3.0, 3.0]), axis=0)
    assert values.data == 3.0
    assert argmax == 0


def test_max_empty_axis_rejected():
    with pytest.raises(ShapeError):
        T.max_over_axis(Tensor(np.zeros((2, 0))), axis=1)


def test_max_backward_conserves_gradient_mass():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = Parameter(rng.normal(size=(4, 6)))
        values, _ = T.max_over_axis(x, axis=1)
        T.sum_over_axis(values, 0).backward()
        # upstream is all ones over 4 outputs; routing must not lose any
        assert x.grad.sum() == 4.0
        assert np.count_nonzero(x.grad) == 4


def test_cross_entropy_uniform_logits():
    out = T.softmax_cross_entropy(Tensor([[2.0, 2.0, 2.0, 2.0]]), [1])
    npt.assert_allclose(out.item(), math.log(4.0), rtol=1e-12)


def test_cross_entropy_confident_correct():
    out = T.softmax_cross_entropy(Tensor([[10.0, 0.0]]), [0])
    npt.assert_allclose(out.item(), math.log1p(math.exp(-10.0)), rtol=1e-12)


def test_cross_entropy_confident_wrong():
    out = T.softmax_cross_entropy(Tensor([[0.0, 10.0]]), [0])
    npt.assert_allclose(out.item(), 10.0 + math.log1p(math.exp(-10.0)), rtol=1e-12)


def test_cross_entropy_shift_invariance():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(5, 4))
        labels = rng.integers(0, 4, size=5)
        shift = float(rng.normal()) * 100.0
        base = T.softmax_cross_entropy(Tensor(logits), labels).item()
        moved = T.softmax_cross_entropy(Tensor(logits + shift), labels).item()
        assert abs(base - moved) < 1e-10


def test_cross_entropy_rejects_bad_label():
    with pytest.raises(ValueError):
        T.softmax_cross_entropy(Tensor([[0.0, 1.0]]), [2])


def test_cosine_similarity_values():
    assert T.cosine_similarity(Tensor([1.0, 0.0]), Tensor([1.0, 0.0])).item() == 1.0
    assert T.cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0
    out = T.cosine_similarity(Tensor([1.0, 2.0]), Tensor([2.0, 1.0]))
    npt.assert_allclose(out.item(), 0.8, rtol=1e-12)


def test_cosine_similarity_scale_invariance():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=6), rng.normal(size=6)
        c = float(rng.uniform(0.1, 50.0))
        base = T.cosine_similarity(Tensor(a), Tensor(b)).item()
        scaled = T.cosine_similarity(Tensor(c * a), Tensor(c * b)).item()
        assert abs(base - scaled) < 1e-10


def test_cosine_similarity_zero_vector_guarded():
    out = T.cosine_similarity(Tensor([0.0, 0.0]), Tensor([1.0, 1.0]))
    assert out.item() == 0.0


def test_conv1d_identity_taps():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 3))
    w = np.zeros((3, 3, 3))
    w[:, :, 1] = np.eye(3)
    out = T.conv1d_circular(Tensor(x), Tensor(w), Tensor(np.zeros(3)))
    npt.assert_array_equal(out.data, x)


def test_conv1d_averaging_taps():
    x = Tensor([[1.0], [2.0], [3.0]])
    w = Tensor(np.full((1, 1, 3), 1.0 / 3.0))
    out = T.conv1d_circular(x, w, Tensor([0.0]))
    npt.assert_allclose(out.data, [[2.0], [2.0], [2.0]], rtol=1e-12)


def test_conv1d_zero_kernel():
    out = T.conv1d_circular(
        Tensor(np.ones((4, 2))), Tensor(np.zeros((2, 2, 3))), Tensor(np.zeros(2))
    )
    npt.assert_array_equal(out.data, np.zeros((4, 2)))


def test_conv1d_needs_three_rows():
    with pytest.raises(ShapeError):
        T.conv1d_circular(
            Tensor(np.ones((2, 1))), Tensor(np.ones((1, 1, 3))), Tensor([0.0])
        )


def test_conv1d_cyclic_shift_equivariance():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(6, 4))
        w = rng.normal(size=(4, 4, 3))
        b = rng.normal(size=4)
        shift = int(rng.integers(1, 6))
        base = T.conv1d_circular(Tensor(x), Tensor(w), Tensor(b)).data
        moved = T.conv1d_circular(
            Tensor(np.roll(x, shift, axis=0)), Tensor(w), Tensor(b)
        ).data
        npt.assert_array_equal(moved, np.roll(base, shift, axis=0))


def test_softmax_normalizes():
    rng = np.random.default_rng(1)
    x = rng.normal(size=7)
    out = T.softmax(Tensor(x))
    expected = np.exp(x - x.max())
    expected /= expected.sum()
    npt.assert_allclose(out.data, expected, rtol=1e-12)
    npt.assert_allclose(out.data.sum(), 1.0, rtol=1e-12)


def test_gather_rows_accumulates_repeats():
    x = Parameter(np.arange(6.0).reshape(3, 2))
    out = T.gather_rows(x, [0, 0, 2])
    npt.assert_array_equal(out.data, [[0.0, 1.0], [0.0, 1.0], [4.0, 5.0]])
    T.sum_over_axis(T.reshape(out, (6,)), 0).backward()
    npt.assert_array_equal(x.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


def test_concat_values_and_backward_split():
    a = Parameter(np.ones((2, 2)))
    b = Parameter(np.full((1, 2), 5.0))
    out = T.concat([a, b], axis=0)
    npt.assert_array_equal(out.data, [[1.0, 1.0], [1.0, 1.0], [5.0, 5.0]])
    weights = Tensor(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
    T.sum_over_axis(T.reshape(T.mul(out, weights), (6,)), 0).backward()
    npt.assert_array_equal(a.grad, [[1.0, 2.0], [3.0, 4.0]])
    npt.assert_array_equal(b.grad, [[5.0, 6.0]])


def test_avg_pool_block_means():
    x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
    out = T.avg_pool_2d(x, 2)
    npt.assert_array_equal(out.data, [[[[2.5, 4.5], [10.5, 12.5]]]])


def test_avg_pool_backward_spreads_evenly():
    x = Parameter(np.zeros((1, 1, 4, 4)))
    out = T.avg_pool_2d(x, 2)
    T.sum_over_axis(T.reshape(out, (4,)), 0).backward()
    npt.assert_array_equal(x.grad, np.full((1, 1, 4, 4), 0.25))


def _conv2d_naive(x, w, b):
    batch, c_in, h, width = x.shape
    c_out = w.shape[0]
    h_out = (h + 2 - 3) // 2 + 1
    w_out = (width + 2 - 3) // 2 + 1
    padded = np.zeros((batch, c_in, h + 2, width + 2))
    padded[:, :, 1:-1, 1:-1] = x
    out = np.zeros((batch, c_out, h_out, w_out))
    for n in range(batch):
        for o in range(c_out):
            for i in range(h_out):
                for j in range(w_out):
                    window = padded[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                    out[n, o, i, j] = (window * w[o]).sum() + b[o]
    return out


def test_conv2d_matches_naive_loops():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 3, 6, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b))
        npt.assert_allclose(out.data, _conv2d_naive(x, w, b), rtol=1e-12, atol=1e-12)


def test_conv2d_output_shape_halves():
    out = T.conv2d(Tensor(np.zeros((1, 1, 8, 8))), Tensor(np.zeros((2, 1, 3, 3))))
    assert out.shape == (1, 2, 4, 4)


def test_transpose_reshape_round_trip():
    rng = np.random.default_rng(2)
    x = Parameter(rng.normal(size=(2, 3, 4)))
    y = T.transpose(x, (2, 0, 1))
    z = T.transpose(y, (1, 2, 0))
    npt.assert_array_equal(z.data, x.data)
    back = T.reshape(T.reshape(x, (6, 4)), (2, 3, 4))
    npt.assert_array_equal(back.data, x.data)


def test_weighted_sum_value():
    out = T.weighted_sum(Tensor([0.25, 0.75]), Tensor([[2.0, 0.0], [0.0, 4.0]]))
    npt.assert_allclose(out.data, [0.5, 3.0], rtol=1e-12)


def test_validate_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        Tensor([1.0, np.nan]).validate()
    Tensor([1.0, 2.0]).validate()


def test_no_grad_skips_tape():
    x = Parameter([1.0, 2.0])
    with T.no_grad():
        y = T.leaky_relu(x, 0.2)
    assert y.parents == ()
    assert y.backward_fn is None


def test_parameter_grad_accumulates_until_zeroed():
    x = Parameter([3.0])
    T.mul(x, x).backward()
    npt.assert_array_equal(x.grad, [6.0])
    T.mul(x, x).backward()
    npt.assert_array_equal(x.grad, [12.0])
    x.zero_grad()
    npt.assert_array_equal(x.grad, [0.0])


def test_backward_through_shared_node():
    # y = x*x + x has gradient 2x + 1
    x = Parameter([4.0])
    y = T.add(T.mul(x, x), x)
    T.sum_over_axis(y, 0).backward()
    npt.assert_array_equal(x.grad, [9.0])


def test_kink_margin_collection():
    with T.kink_margins() as margins:
        T.leaky_relu(Tensor([0.5, -2.0]), 0.2)
        T.max_over_axis(Tensor([1.0, 4.0]), axis=0)
    assert margins == [0.5, 3.0]
