import numpy as np
import pytest

from mfvecchia.rho import (
    DegenerateVariance,
    RhoKind,
    RhoModel,
    UnfittedEmpiricalModel,
    constant,
    empirical_slopes,
    evaluate,
    fit_empirical_gp,
    linear,
    paired_series,
    quadratic,
)


def test_constant():
    """[PAPER] constant scaling 0.6 at three locations."""
    np.testing.assert_array_equal(evaluate(constant(0.6), np.zeros((3, 2))), [0.6, 0.6, 0.6])


def test_linear():
    """[TRIVIAL] 1 + 2*0.5 + 0*7 = 2."""
    assert evaluate(linear(1, 2, 0), [[0.5, 7.0]])[0] == pytest.approx(2.0)


def test_quadratic():
    """[TRIVIAL] only the s1^2 term: 3^2 = 9."""
    assert evaluate(quadratic(0, 0, 0, 1, 0), [[3.0, 0.0]])[0] == pytest.approx(9.0)


def test_three_column_locations_accepted():
    """[TRIVIAL] time column is ignored."""
    np.testing.assert_array_equal(linear(0, 1, 1)([[1, 2, 99.0]]), [3.0])


def test_coefficient_count_checked():
    """[TRIVIAL]"""
    with pytest.raises(ValueError):
        RhoModel(RhoKind.LINEAR, (1.0,))


def test_large_rho_warns():
    """[TRIVIAL]"""
    with pytest.warns(RuntimeWarning):
        evaluate(constant(11.0), [[0, 0]])


def test_unfitted_empirical_raises():
    """[TRIVIAL]"""
    with pytest.raises(UnfittedEmpiricalModel):
        evaluate(RhoModel(RhoKind.EMPIRICAL), [[0, 0]])


def pairs_of(yl, yh, xy=(0.0, 0.0)):
    return {0: (np.asarray(xy), np.asarray(yl, float), np.asarray(yh, float))}


def test_exact_linear_relation():
    """[TRIVIAL] y_H = 2 y_L gives slope 2."""
    yl = np.random.default_rng(0).normal(size=20)
    s, _, _ = empirical_slopes(pairs_of(yl, 2 * yl))
    assert s[0] == pytest.approx(2.0, rel=1e-13)


def test_hand_computed_slope():
    """[DERIVED] cov((0,1,2),(1,3,5)) / var(0,1,2) = 2 / 1."""
    s, _, _ = empirical_slopes(pairs_of([0, 1, 2], [1, 3, 5]))
    assert s[0] == pytest.approx(2.0, rel=1e-14)


def test_independent_series_slope_vanishes():
    """[DERIVED] Monte-Carlo: independent long series have slope near zero."""
    rng = np.random.default_rng(42)
    s, _, _ = empirical_slopes(pairs_of(rng.normal(size=10_000), rng.normal(size=10_000)))
    assert abs(s[0]) < 0.1


def test_degenerate_variance():
    """[TRIVIAL]"""
    with pytest.raises(DegenerateVariance):
        empirical_slopes(pairs_of([1, 1, 1], [0, 1, 2]))


def test_too_few_common_times():
    """[TRIVIAL]"""
    with pytest.raises(ValueError):
        empirical_slopes(pairs_of([1, 2], [0, 1]))


def test_paired_series_uses_common_times():
    """[TRIVIAL] only times present at both fidelities are paired."""
    lf = np.array([[0, 0, 0.0], [0, 0, 1.0], [0, 0, 2.0], [1, 1, 0.0]])
    hf = np.array([[0, 0, 1.0], [0, 0, 2.0], [0, 0, 3.0]])
    out = paired_series(lf, [10, 11, 12, 13], hf, [1, 2, 3], [7, 7, 7])
    xy, yl, yh = out[7]
    np.testing.assert_array_equal(yl, [11, 12])
    np.testing.assert_array_equal(yh, [1, 2])


def test_paired_series_with_matched_site():
    """[TRIVIAL] LF values are read at the matched grid cell."""
    lf = np.array([[5, 5, 0.0], [5, 5, 1.0]])
    hf = np.array([[4.9, 5.1, 0.0], [4.9, 5.1, 1.0]])
    out = paired_series(lf, [1, 2], hf, [3, 4], ["a", "a"], lf_site={"a": (5, 5)})
    np.testing.assert_array_equal(out["a"][1], [1, 2])


def test_constant_slopes_give_constant_field():
    """[TRIVIAL] equal slopes c give posterior mean c everywhere."""
    coords = np.random.default_rng(0).uniform(0, 5, size=(8, 2))
    m = fit_empirical_gp(np.full(8, 0.7), coords)
    far = np.array([[2.5, 2.5], [10, -4], [0, 0]])
    np.testing.assert_allclose(m(far), 0.7, atol=1e-6)


def test_interpolates_training_station():
    """[TRIVIAL] near-zero noise returns the station's own slope."""
    coords = np.array([[0, 0], [3, 0], [0, 3], [3, 3.0]])
    slopes = np.array([0.5, 1.0, 1.5, 0.8])
    m = fit_empirical_gp(slopes, coords, {"amp": 1.0, "lengths": 2.0, "noise": 1e-10})
    np.testing.assert_allclose(m(coords), slopes, atol=1e-4)


def test_midpoint_bracketed():
    """[DERIVED] two stations 1 and 2, long length scale: midpoint value in (1, 2)."""
    coords = np.array([[0, 0], [1, 0.0]])
    m = fit_empirical_gp([1.0, 2.0], coords, {"amp": 1.0, "lengths": 10.0, "noise": 1e-6})
    v = m([[0.5, 0.0]])[0]
    assert 1.0 < v < 2.0
    assert v == pytest.approx(1.5, abs=1e-3)


def test_scale_coherence():
    """[DERIVED] fixed smoother hyperparameters: scaling inputs scales the field."""
    rng = np.random.default_rng(3)
    coords = rng.uniform(0, 4, size=(6, 2))
    s = rng.normal(size=6)
    hp = {"amp": 1.0, "lengths": 1.5, "noise": 0.01}
    q = rng.uniform(0, 4, size=(5, 2))
    np.testing.assert_allclose(fit_empirical_gp(3 * s, coords, hp)(q),
                               3 * fit_empirical_gp(s, coords, hp)(q), rtol=1e-10)


def test_empirical_model_has_no_trainable_coefficients():
    """[TRIVIAL]"""
    m = fit_empirical_gp([1.0, 2.0, 1.5], [[0, 0], [1, 0], [0, 1]])
    assert m.kind is RhoKind.EMPIRICAL and m.n_trainable == 0
