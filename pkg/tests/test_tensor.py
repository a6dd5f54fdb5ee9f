import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from repgelan.exceptions import DimensionError
from repgelan.oracles import direct_conv, grouped_conv_by_parts
from repgelan.reparam import identity_as_3x3
from repgelan.tensor import (
    BnParams,
    ConvParams,
    activation,
    batchnorm_infer,
    concat_channels,
    conv2d,
    pool2d,
    softmax_last,
    split_channels,
    upsample_nearest,
)
from repgelan.init import random_conv

from conftest import rand4


def t(rows):
    return np.array(rows, dtype=np.float32)[None, None]


def bn(c, gamma=1.0, beta=0.0, mean=0.0, var=1.0, eps=0.0):
    return BnParams(*(np.full(c, v, dtype=np.float32) for v in (gamma, beta, mean, var)), eps=eps)


def test_conv_scalar_kernel():
    p = ConvParams(np.full((1, 1, 1, 1), 2.0, dtype=np.float32))
    np.testing.assert_array_equal(conv2d(t([[1, 2], [3, 4]]), p), t([[2, 4], [6, 8]]))


def test_conv_center_hot_kernel_is_identity(rng):
    x = rand4(rng, 2, 3, 7, 5)
    p = ConvParams(identity_as_3x3(3), padding=1)
    np.testing.assert_array_equal(conv2d(x, p), x)


@pytest.mark.parametrize("groups", [2, 4])
def test_grouped_conv_equals_parts(rng, groups):
    p = random_conv(rng, 8, 8, 3, groups=groups, bias=True)
    x = rand4(rng, 1, 8, 6, 6)
    np.testing.assert_allclose(conv2d(x, p), grouped_conv_by_parts(x, p), atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2, 4]), st.sampled_from([1, 3]), st.integers(1, 2))
def test_conv_matches_loop_oracle(seed, groups, k, stride):
    rng = np.random.default_rng(seed)
    p = random_conv(rng, 4, 8, k, stride, groups=groups, bias=True)
    x = rand4(rng, 2, 4, 5, 6)
    np.testing.assert_allclose(conv2d(x, p), direct_conv(x, p), atol=1e-5)


def test_conv_channel_mismatch():
    p = ConvParams(np.zeros((2, 3, 1, 1), dtype=np.float32))
    with pytest.raises(DimensionError):
        conv2d(np.zeros((1, 2, 4, 4), dtype=np.float32), p)


def test_conv_rejects_bad_rank():
    p = ConvParams(np.zeros((1, 1, 1, 1), dtype=np.float32))
    with pytest.raises(DimensionError):
        conv2d(np.zeros((4, 4), dtype=np.float32), p)


def test_conv_rejects_non_finite():
    p = ConvParams(np.ones((1, 1, 1, 1), dtype=np.float32))
    with pytest.raises(ValueError):
        conv2d(t([[np.nan]]), p)


def test_bn_identity(rng):
    x = rand4(rng, 1, 3, 4, 4)
    np.testing.assert_array_equal(batchnorm_infer(x, bn(3)), x)


def test_bn_formula():
    out = batchnorm_infer(t([[2.0]]), bn(1, gamma=3, beta=1, mean=1, var=4))
    assert out.item() == pytest.approx(2.5)


def test_bn_zero_gamma(rng):
    out = batchnorm_infer(rand4(rng, 1, 2, 3, 3), bn(2, gamma=0, beta=0.7))
    np.testing.assert_allclose(out, 0.7, rtol=0, atol=1e-7)


def test_bn_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        bn(1, var=0.0, eps=0.0)


def test_activations():
    x = t([[-1.0, 0.0]])
    assert activation(x, "relu").ravel().tolist() == [0.0, 0.0]
    assert activation(t([[0.0]]), "sigmoid").item() == 0.5
    assert activation(t([[0.0]]), "silu").item() == 0.0
    assert activation(t([[2.0]]), "silu").item() == pytest.approx(2 / (1 + math.exp(-2)), rel=1e-6)
    with pytest.raises(ValueError):
        activation(x, "gelu")


def test_sigmoid_extremes_are_finite():
    out = activation(t([[-1000.0, 1000.0]]), "sigmoid")
    assert np.all(np.isfinite(out))


def test_pool_examples():
    x = t([[1, 2], [3, 4]])
    assert pool2d(x, "max", 2, 2).item() == 4
    assert pool2d(x, "avg", 2, 2).item() == 2.5


@pytest.mark.parametrize("mode", ["max", "avg"])
def test_pool_unit_window_identity(rng, mode):
    x = rand4(rng, 1, 2, 5, 5)
    np.testing.assert_array_equal(pool2d(x, mode, 1, 1), x)


def test_avg_pool_padding_excluded_from_divisor():
    x = np.full((1, 1, 4, 4), 3.0, dtype=np.float32)
    np.testing.assert_allclose(pool2d(x, "avg", 3, 1, 1), 3.0)


def test_max_pool_padding_never_wins():
    x = np.full((1, 1, 3, 3), -5.0, dtype=np.float32)
    np.testing.assert_array_equal(pool2d(x, "max", 3, 1, 1), x)


def test_pool_window_too_large():
    with pytest.raises(DimensionError):
        pool2d(np.zeros((1, 1, 2, 2), dtype=np.float32), "max", 5, 1)


def test_upsample():
    x = t([[1, 2], [3, 4]])
    np.testing.assert_array_equal(upsample_nearest(x, 1), x)
    np.testing.assert_array_equal(upsample_nearest(t([[1]]), 2), t([[1, 1], [1, 1]]))
    np.testing.assert_array_equal(upsample_nearest(x, 2), t([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]))


def test_concat_split(rng):
    x = rand4(rng, 2, 8, 3, 3)
    parts = split_channels(x, [3, 5])
    assert [p.shape[1] for p in parts] == [3, 5]
    np.testing.assert_array_equal(concat_channels(parts), x)
    np.testing.assert_array_equal(split_channels(x, [8])[0], x)
    a, b = split_channels(x[:, :4], [2, 2])
    np.testing.assert_array_equal(a, x[:, :2])
    np.testing.assert_array_equal(b, x[:, 2:4])


def test_concat_order(rng):
    a, b = rand4(rng, 1, 1, 2, 2), rand4(rng, 1, 1, 2, 2)
    out = concat_channels([a, b])
    np.testing.assert_array_equal(out[:, 0], a[:, 0])
    np.testing.assert_array_equal(out[:, 1], b[:, 0])


def test_concat_spatial_mismatch():
    with pytest.raises(DimensionError):
        concat_channels([np.zeros((1, 1, 2, 2), np.float32), np.zeros((1, 1, 3, 2), np.float32)])


def test_split_bad_sizes(rng):
    with pytest.raises(DimensionError):
        split_channels(rand4(rng, 1, 4, 2, 2), [1, 2])


def test_softmax_examples():
    np.testing.assert_allclose(softmax_last(np.zeros(4)), 0.25)
    np.testing.assert_allclose(softmax_last(np.array([0.0, math.log(2)])), [1 / 3, 2 / 3], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20), st.floats(-100, 100))
def test_softmax_properties(values, shift):
    x = np.array(values)
    p = softmax_last(x)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) <= 1e-6
    np.testing.assert_allclose(softmax_last(x + shift), p, atol=1e-6)


def test_ops_are_deterministic(rng):
    p = random_conv(rng, 4, 4, 3)
    x = rand4(rng, 1, 4, 8, 8)
    assert conv2d(x, p).tobytes() == conv2d(x.copy(), p).tobytes()
