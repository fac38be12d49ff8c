import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedtrident.mathcore import (cosine_similarity, l2_norm, make_rng, sample_dirichlet,
                                 sample_gaussian, softmax)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
vectors = st.lists(finite, min_size=1, max_size=12)


@pytest.mark.parametrize("v, expected", [([3, 4], 5.0), ([0, 0, 0], 0.0), ([1, 1, 1, 1], 2.0)])
def test_l2_norm_examples(v, expected):
    assert l2_norm(v) == expected


def test_l2_norm_empty():
    with pytest.raises(ValueError):
        l2_norm([])


def test_cosine_examples():
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 2], [2, 4]) == pytest.approx(1.0, abs=1e-12)
    assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(0.70711, abs=1e-5)


def test_cosine_zero_operand_is_undefined():
    assert cosine_similarity([0, 0], [1, 2]) is None
    assert cosine_similarity([1, 2], [0, 0]) is None


def test_cosine_dimension_mismatch():
    with pytest.raises(ValueError):
        cosine_similarity([1, 2], [1, 2, 3])


def test_softmax_examples():
    np.testing.assert_allclose(softmax([0, 0]), [0.5, 0.5])
    np.testing.assert_allclose(softmax([math.log(2), 0]), [2 / 3, 1 / 3], atol=1e-9)
    p = softmax([1000, 0])
    assert np.all(np.isfinite(p))
    assert p[0] == pytest.approx(1.0) and p[1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_empty():
    with pytest.raises(ValueError):
        softmax([])


def test_dirichlet_simplex_and_degenerate():
    rng = make_rng(0, 1)
    for _ in range(20):
        p = sample_dirichlet(0.3, 7, rng)
        assert p.min() >= 0 and abs(p.sum() - 1) < 1e-9
    assert sample_dirichlet(2.0, 1, rng).tolist() == [1.0]


def test_dirichlet_concentration():
    rng = make_rng(3, 0)
    draws = np.array([sample_dirichlet(1e6, 2, rng) for _ in range(100)])
    assert np.all(np.abs(draws - 0.5) < 0.01)


def test_dirichlet_rejects_bad_alpha():
    with pytest.raises(ValueError):
        sample_dirichlet(0.0, 3, make_rng(0))


def test_gaussian():
    rng = make_rng(1, 2)
    assert sample_gaussian(5.0, 0.0, rng) == 5.0
    draws = sample_gaussian(0.0, 1.0, make_rng(1, 2), size=10_000)
    assert abs(draws.mean()) < 0.05
    with pytest.raises(ValueError):
        sample_gaussian(0.0, -1.0, rng)


def test_rng_streams_are_reproducible_and_distinct():
    a = make_rng(42, (7, 3)).random(5)
    b = make_rng(42, (7, 3)).random(5)
    c = make_rng(42, (7, 4)).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    np.testing.assert_array_equal(sample_gaussian(0, 1, make_rng(9), size=8),
                                  sample_gaussian(0, 1, make_rng(9), size=8))


@given(vectors, finite)
def test_norm_is_absolutely_homogeneous(v, c):
    assert l2_norm(np.multiply(c, v)) == pytest.approx(abs(c) * l2_norm(v), rel=1e-9, abs=1e-9)


@given(vectors, st.floats(0.01, 100))
def test_cosine_with_scaled_copy(v, c):
    if l2_norm(v) < 1e-6:
        return
    assert cosine_similarity(v, np.multiply(c, v)) == pytest.approx(1.0, abs=1e-9)
    assert cosine_similarity(v, np.multiply(-c, v)) == pytest.approx(-1.0, abs=1e-9)


@settings(max_examples=50)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=10), st.floats(-100, 100))
def test_softmax_shift_invariance(z, shift):
    np.testing.assert_allclose(softmax(z), softmax(np.add(z, shift)), atol=1e-9)
    assert abs(softmax(z).sum() - 1) < 1e-9
