import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ffnrep.errors import BoundsError, DegenerateBatchError, DimensionError, StateError
from ffnrep.tensor_core import (
    BatchNormParams,
    LayerNormParams,
    add_bias,
    batchnorm_batch,
    batchnorm_eval,
    batchnorm_train_step,
    concat_cols,
    gelu,
    gelu_grad,
    layernorm,
    layernorm_p,
    matmul,
    matmul_reference,
    rel_frobenius,
    slice_cols,
    softmax_rows,
)

dims = st.integers(min_value=1, max_value=7)


@given(dims, dims, dims, st.integers(0, 2**31 - 1))
def test_matmul_matches_triple_loop(m, k, n, seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal((m, k)), r.standard_normal((k, n))
    np.testing.assert_allclose(matmul(a, b), matmul_reference(a, b), rtol=1e-12, atol=1e-12)


def test_matmul_rejects_inner_mismatch():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((4, 2)))


def test_matmul_hand_case():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(matmul(a, b), [[19.0, 22.0], [43.0, 50.0]])


def test_gelu_reference_values():
    # x * Phi(x) with Phi(1) = 0.5 * (1 + erf(1/sqrt 2))
    phi1 = 0.5 * (1 + math.erf(1 / math.sqrt(2)))
    assert gelu(np.array([1.0]))[0] == pytest.approx(phi1, abs=1e-12)
    assert gelu(np.array([1.0]))[0] == pytest.approx(0.8413447, abs=1e-7)
    assert gelu(np.array([0.0]))[0] == 0.0
    # Phi(1) + phi(1)
    assert gelu_grad(np.array([1.0]))[0] == pytest.approx(1.0833154, abs=1e-7)
    assert gelu_grad(np.array([0.0]))[0] == pytest.approx(0.5, abs=1e-15)


@given(st.floats(-6, 6, allow_nan=False))
def test_gelu_grad_matches_central_difference(x):
    h = 1e-5
    fd = (gelu(np.array([x + h])) - gelu(np.array([x - h])))[0] / (2 * h)
    assert gelu_grad(np.array([x]))[0] == pytest.approx(fd, abs=1e-8)


def test_softmax_rows_sum_to_one(rng):
    x = rng.standard_normal((5, 9)) * 30
    s = softmax_rows(x)
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, rtol=1e-12)
    assert np.all(s >= 0)


def test_batchnorm_identity_is_near_identity(rng):
    x = rng.standard_normal((4, 6))
    bn = BatchNormParams.identity(6, eps=0.0)
    np.testing.assert_allclose(batchnorm_eval(x, bn), x, rtol=0, atol=1e-15)


def test_batchnorm_eval_hand_case():
    bn = BatchNormParams(
        gamma=np.array([2.0]), beta=np.array([1.0]), running_mean=np.array([3.0]), running_var=np.array([4.0]), eps=0.0
    )
    # 2 * (5 - 3) / 2 + 1
    assert batchnorm_eval(np.array([[5.0]]), bn)[0, 0] == pytest.approx(3.0)


def test_batchnorm_rejects_negative_variance():
    with pytest.raises(ValueError):
        BatchNormParams(np.ones(2), np.zeros(2), np.zeros(2), np.array([1.0, -1.0]))


def test_batchnorm_batch_statistics(rng):
    x = rng.standard_normal((50, 3)) * 2 + 1
    y, mean, var = batchnorm_batch(x, BatchNormParams.identity(3))
    np.testing.assert_allclose(mean, x.mean(axis=0))
    np.testing.assert_allclose(var, x.var(axis=0))
    np.testing.assert_allclose(y.mean(axis=0), 0, atol=1e-12)


def test_batchnorm_single_row_is_degenerate():
    with pytest.raises(DegenerateBatchError):
        batchnorm_batch(np.ones((1, 3)), BatchNormParams.identity(3))


def test_train_step_updates_running_stats_and_frozen_refuses(rng):
    x = rng.standard_normal((20, 3)) + 5
    bn = BatchNormParams.identity(3)
    batchnorm_train_step(x, bn, momentum=0.1)
    np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=0, ddof=1))
    bn.freeze()
    with pytest.raises(StateError):
        batchnorm_train_step(x, bn)


def test_layernorm_rows_are_standardized(rng):
    x = rng.standard_normal((4, 16)) * 3 + 2
    y = layernorm(x, np.ones(16), np.zeros(16), eps=0.0)
    np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-12)
    np.testing.assert_allclose(y.std(axis=-1), 1, atol=1e-12)
    np.testing.assert_allclose(layernorm_p(x, LayerNormParams.identity(16, eps=0.0)), y)


def test_slice_and_concat_round_trip(rng):
    x = rng.standard_normal((3, 8))
    np.testing.assert_array_equal(concat_cols(slice_cols(x, 0, 3), slice_cols(x, 3, 8)), x)
    assert slice_cols(x, 4, 4).shape == (3, 0)
    with pytest.raises(BoundsError):
        slice_cols(x, 2, 9)


def test_add_bias_shape_check():
    with pytest.raises(DimensionError):
        add_bias(np.ones((2, 3)), np.ones(4))


def test_rel_frobenius():
    a = np.array([[3.0, 4.0]])
    assert rel_frobenius(a, a) == 0.0
    assert rel_frobenius(np.zeros((1, 2)), a) == pytest.approx(1.0)


def test_gelu_float32_path_tracks_float64(rng):
    x = np.concatenate([rng.standard_normal(10_000) * 3, [-9.0, -4.0, 0.0, 4.0, 9.0]])
    ref = gelu(x)
    got = gelu(x.astype(np.float32))
    assert got.dtype == np.float32
    np.testing.assert_allclose(got, ref, rtol=2e-6, atol=2e-6)
