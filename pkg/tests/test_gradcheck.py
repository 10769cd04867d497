"""Tests for the finite-difference gradient harness itself."""

import numpy as np
import pytest

from pcnn import gradcheck, tensor as T
from pcnn.tensor import Parameter, Tensor

ELEMENTARY = [
    "add", "sub", "mul", "scale", "matmul", "dot", "weighted_sum",
    "reshape", "transpose", "concat", "gather_rows", "sum_over_axis",
    "mean_over_axis", "max_over_axis", "leaky_relu", "softmax",
    "softmax_cross_entropy", "cosine_similarity", "batch_norm_train",
    "batch_norm_eval", "conv2d", "avg_pool_2d", "conv1d_circular",
]


def test_quadratic_is_numerically_exact():
    x = Parameter([3.0])
    numeric = gradcheck.numeric_grad(
        lambda: T.sum_over_axis(T.mul(x, x), 0), x, h=1e-5
    )
    assert gradcheck.relative_error(np.array([6.0]), numeric) < 1e-9


def test_cross_entropy_check_is_tight():
    for seed in range(5):
        result = gradcheck.run_check("softmax_cross_entropy", seed=seed)
        assert result.max_rel_err < 1e-6


@pytest.mark.parametrize("name", ELEMENTARY)
def test_elementary_ops_pass(name):
    for seed in range(5):
        result = gradcheck.run_check(name, seed=seed)
        assert result.max_rel_err < 1e-5, (name, seed, result.max_rel_err)


def test_registry_covers_elementary_ops():
    assert set(ELEMENTARY) <= set(gradcheck.CHECKS)


def test_kink_instances_are_resampled():
    calls = []

    def builder(rng):
        calls.append(1)
        # first attempt lands exactly on the kink and must be rejected
        value = 0.0 if len(calls) == 1 else 1.0
        x = Parameter([value, 2.0])
        return lambda: T.sum_over_axis(T.leaky_relu(x, 0.2), 0), [x]

    gradcheck.CHECKS["tmp_kink"] = builder
    try:
        result = gradcheck.run_check("tmp_kink", seed=0)
    finally:
        del gradcheck.CHECKS["tmp_kink"]
    assert result.attempts == 2
    assert result.max_rel_err < 1e-5


def test_unresolvable_kink_raises():
    def builder(rng):
        x = Parameter([0.0])
        return lambda: T.sum_over_axis(T.leaky_relu(x, 0.2), 0), [x]

    gradcheck.CHECKS["tmp_stuck"] = builder
    try:
        with pytest.raises(RuntimeError, match="tmp_stuck"):
            gradcheck.run_check("tmp_stuck", seed=0, max_attempts=3)
    finally:
        del gradcheck.CHECKS["tmp_stuck"]


def test_corrupted_gradient_is_detected():
    def bad_double(x):
        data = x.data * 2.0

        def backward(g):
            x.grad += g * 3.0  # wrong on purpose

        return Tensor(data, (x,), backward)

    def builder(rng):
        x = Parameter(rng.normal(size=4))
        return lambda: T.sum_over_axis(bad_double(x), 0), [x]

    gradcheck.CHECKS["tmp_bad"] = builder
    try:
        result = gradcheck.run_check("tmp_bad", seed=0)
    finally:
        del gradcheck.CHECKS["tmp_bad"]
    assert result.max_rel_err > 0.3


def test_relative_error_uses_floor_denominator():
    assert gradcheck.relative_error(np.zeros(3), np.zeros(3)) == 0.0
    # 1e-12 absolute difference against the 1e-8 floor
    err = gradcheck.relative_error(np.array([0.0]), np.array([1e-12]))
    assert err == pytest.approx(1e-4)


def test_run_suite_aggregates_worst_error():
    rows = gradcheck.run_suite(names=["matmul", "dot"], n_seeds=3)
    assert [r.name for r in rows] == ["matmul", "dot"]
    assert all(r.seeds == 3 for r in rows)
    assert all(r.max_rel_err < 1e-5 for r in rows)
