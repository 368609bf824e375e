import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfvecchia.kernels import KernelParams, cross_gram, eval_separable, gram, latent_cov
from mfvecchia.simulate import lengthscale_from_corr

coord = st.floats(-5, 5, allow_nan=False)
point = st.tuples(coord, coord, coord)


def test_zero_lag_returns_amplitude():
    """[TRIVIAL] at zero lag both exponentials are one."""
    kp = KernelParams(2.5, 0.3, 7.0)
    assert eval_separable((1.0, 2.0, 3.0), (1.0, 2.0, 3.0), kp) == pytest.approx(2.5, abs=0)


def test_unit_diagonal_offset():
    """[DERIVED] hand evaluation: exp(-(1+1)/2) = exp(-1)."""
    kp = KernelParams(1.0, 1.0, 1.0)
    assert eval_separable((0, 0, 0), (1, 1, 0), kp) == pytest.approx(0.367879441171, rel=1e-12)


def test_long_time_scale_limit_is_monotone():
    """[TRIVIAL] exponent tends to zero as the time scale grows."""
    vals = [eval_separable((0, 0, 0), (0, 0, 3.0), KernelParams(1.0, 1.0, lt))
            for lt in (0.5, 1, 10, 100, 1e4)]
    assert np.all(np.diff(vals) > 0)
    assert vals[-1] == pytest.approx(1.0, abs=1e-7)


def test_gram_single_point():
    """[TRIVIAL]"""
    np.testing.assert_array_equal(gram([[0, 0, 0]], KernelParams(1, 1, 1)), [[1.0]])


def test_gram_identical_points_with_jitter():
    """[TRIVIAL] off-diagonal at zero lag stays unjittered."""
    K = gram([[1, 1, 1], [1, 1, 1]], KernelParams(1, 1, 1), jitter=1e-8)
    np.testing.assert_array_equal(K, [[1 + 1e-8, 1], [1, 1 + 1e-8]])


def test_gram_target_temporal_correlation():
    """[DERIVED] length scale built from a target correlation reproduces it."""
    dt = 0.25
    kp = KernelParams(1.7, 1.0, lengthscale_from_corr(0.8, dt))
    K = gram([[0, 0, 0], [0, 0, dt], [0, 0, 2 * dt]], kp)
    np.testing.assert_allclose(np.diag(K, 1), 0.8 * 1.7, atol=1e-12)


def test_cross_gram_equals_gram_without_jitter():
    """[TRIVIAL]"""
    rng = np.random.default_rng(0)
    P = rng.normal(size=(7, 3))
    kp = KernelParams(0.7, 0.9, 1.3)
    np.testing.assert_allclose(cross_gram(P, P, kp), gram(P, kp), rtol=0, atol=1e-15)


def test_cross_gram_single_pair():
    """[TRIVIAL]"""
    kp = KernelParams(1.2, 0.5, 2.0)
    p, q = (0.1, 0.2, 0.3), (0.5, -0.1, 1.0)
    assert cross_gram([p], [q], kp)[0, 0] == pytest.approx(eval_separable(p, q, kp), rel=1e-14)


def test_cross_gram_matches_entrywise_loop():
    """[DERIVED] entrywise oracle on a random 4x3 case."""
    rng = np.random.default_rng(1)
    R, C = rng.normal(size=(4, 3)), rng.normal(size=(3, 3))
    kp = KernelParams(0.9, 0.7, 1.4)
    loop = np.array([[eval_separable(r, c, kp) for c in C] for r in R])
    np.testing.assert_allclose(cross_gram(R, C, kp), loop, rtol=1e-13)


def test_latent_cov_adds_relative_jitter():
    """[TRIVIAL]"""
    kp = KernelParams(4.0, 1.0, 1.0)
    K = latent_cov([[0, 0, 0], [5, 5, 5]], kp)
    np.testing.assert_allclose(np.diag(K), 4.0 + 4e-8, rtol=1e-15)


@pytest.mark.parametrize("bad", [0.0, -1.0, np.inf, np.nan])
def test_kernel_params_must_be_positive(bad):
    """[TRIVIAL]"""
    with pytest.raises(ValueError):
        KernelParams(bad, 1.0, 1.0)
    with pytest.raises(ValueError):
        KernelParams(1.0, 1.0, bad)


def test_points_must_have_three_columns():
    """[TRIVIAL]"""
    with pytest.raises(ValueError):
        gram(np.zeros((3, 2)), KernelParams(1, 1, 1))


@settings(max_examples=60, deadline=None)
@given(st.lists(point, min_size=1, max_size=8, unique=True),
       st.floats(0.1, 3), st.floats(0.1, 3), st.floats(0.1, 3))
def test_gram_symmetric_bounded(pts, s, ls, lt):
    """[TRIVIAL] symmetric, bounded by the amplitude, diagonal equal to it."""
    K = gram(pts, KernelParams(s, ls, lt))
    np.testing.assert_array_equal(K, K.T)
    assert np.all(K <= s * (1 + 1e-15)) and np.all(K >= 0)
    np.testing.assert_array_equal(np.diag(K), s)


@settings(max_examples=40, deadline=None)
@given(st.lists(point, min_size=2, max_size=10, unique=True), st.floats(0.2, 2), st.floats(0.2, 2))
def test_latent_cov_positive_definite(pts, ls, lt):
    """[DERIVED] separable RBF plus jitter factors by Cholesky."""
    np.linalg.cholesky(latent_cov(pts, KernelParams(1.0, ls, lt)))
