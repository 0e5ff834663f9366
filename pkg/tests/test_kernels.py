import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kooplift.kernels import (
    KernelFamily,
    KernelSpec,
    gram,
    kernel_eval,
    thin_plate_features,
    thin_plate_matrix,
)

M52 = KernelSpec(KernelFamily.Matern52, 1.0, 1.0)
RBF = KernelSpec(KernelFamily.RBF, 1.0, 1.0)


def test_zero_distance_gives_variance():
    assert kernel_eval(M52, [0.3, -0.2], [0.3, -0.2]) == pytest.approx(1.0)
    spec = KernelSpec(KernelFamily.RBF, 2.0, 3.5)
    assert kernel_eval(spec, [1.0], [1.0]) == pytest.approx(3.5)


def test_matern52_unit_distance_closed_form():
    # oracle: the profile evaluated directly at r = 1
    expected = (1.0 + math.sqrt(5.0) + 5.0 / 3.0) * math.exp(-math.sqrt(5.0))
    assert kernel_eval(M52, [0.0], [1.0]) == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(0.5239941088, abs=1e-9)


def test_rbf_half_value_inversion():
    # exp(-r^2/2) = 1/2 at r^2 = 2 ln 2
    r = math.sqrt(2.0 * math.log(2.0))
    assert kernel_eval(RBF, [0.0], [r]) == pytest.approx(0.5, abs=1e-15)


def test_matern32_profile():
    spec = KernelSpec(KernelFamily.Matern32, 1.0, 1.0)
    expected = (1.0 + math.sqrt(3.0)) * math.exp(-math.sqrt(3.0))
    assert kernel_eval(spec, [0.0], [1.0]) == pytest.approx(expected, abs=1e-15)


def test_kernel_eval_errors():
    with pytest.raises(ValueError):
        kernel_eval(M52, [0.0, 1.0], [0.0])
    with pytest.raises(ValueError):
        kernel_eval(M52, [np.nan], [0.0])
    with pytest.raises(ValueError):
        KernelSpec(KernelFamily.RBF, -1.0, 1.0)
    with pytest.raises(ValueError):
        KernelSpec(KernelFamily.RBF, 1.0, 0.0)


def test_gram_single_point():
    spec = KernelSpec(KernelFamily.Matern52, 1.0, 2.0)
    K = gram(spec, [[0.5, 0.5]])
    assert K.shape == (1, 1)
    assert K[0, 0] == pytest.approx(2.0)


def test_gram_symmetrized_bit_exactly():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(17, 3))
    K = gram(M52, X)
    assert np.array_equal(K, K.T)


def test_gram_matches_pairwise_loop():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(5, 2))
    Y = rng.normal(size=(3, 2))
    K = gram(M52, X, Y)
    for i in range(5):
        for j in range(3):
            assert abs(K[i, j] - kernel_eval(M52, X[i], Y[j])) <= 1e-14


def test_gram_numerically_psd():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(30, 2))
    for fam in KernelFamily:
        spec = KernelSpec(fam, 0.7, 1.3)
        w = np.linalg.eigvalsh(gram(spec, X))
        assert w[0] >= -1e-10 * spec.variance * len(X)


def test_gram_errors():
    with pytest.raises(ValueError):
        gram(M52, np.zeros((0, 2)))
    with pytest.raises(ValueError):
        gram(M52, np.zeros((3, 2)), np.zeros((3, 1)))


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=2, max_size=2),
    st.lists(st.floats(-10, 10), min_size=2, max_size=2),
    st.sampled_from(list(KernelFamily)),
)
def test_bounded_positive_property(x, y, fam):
    # distances kept inside the range where the profile stays above underflow
    spec = KernelSpec(fam, 1.5, 2.0)
    v = kernel_eval(spec, x, y)
    assert 0.0 < v <= spec.variance + 1e-12
    assert kernel_eval(spec, x, x) == pytest.approx(spec.variance)


def test_thin_plate_at_center_is_zero():
    assert thin_plate_features([1.0, 2.0], [[1.0, 2.0], [0.0, 0.0]])[0] == 0.0


def test_thin_plate_unit_distance_is_zero():
    assert thin_plate_features([1.0, 0.0], [[0.0, 0.0]])[0] == pytest.approx(0.0, abs=1e-15)


def test_thin_plate_at_distance_e():
    val = thin_plate_features([math.e], [[0.0]])[0]
    assert val == pytest.approx(math.e**2, abs=1e-12)


def test_thin_plate_continuity_at_origin():
    # r^2 log r -> 0; at r = 1e-8 the value is already ~ -1.8e-15
    v = thin_plate_features([1e-8], [[0.0]])[0]
    assert abs(v) < 1e-13


def test_thin_plate_matrix_matches_vector():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(4, 2))
    C = rng.normal(size=(6, 2))
    M = thin_plate_matrix(X, C)
    for i in range(4):
        np.testing.assert_allclose(M[i], thin_plate_features(X[i], C), atol=1e-15)
