import json

import numpy as np
import pytest

from mfvecchia.simulate import (
    TABLE2_CONFIG,
    SimConfig,
    generate,
    lengthscale_from_corr,
    split_stations,
    true_model_params,
)


def test_lengthscale_unit_case():
    """[TRIVIAL] c = exp(-1/2), d = 1 gives 1."""
    assert lengthscale_from_corr(np.exp(-0.5), 1.0) == pytest.approx(1.0, rel=1e-15)


def test_lengthscale_hand_value():
    """[DERIVED] 1/sqrt(-2 ln 0.8) = 1/sqrt(0.4462871) = 1.4969002."""
    assert lengthscale_from_corr(0.8, 1.0) == pytest.approx(1.4969002, rel=1e-7)


def test_lengthscale_round_trip():
    """[TRIVIAL] algebraic inverse."""
    rng = np.random.default_rng(0)
    for c, d in zip(rng.uniform(0.01, 0.99, 50), rng.uniform(0.01, 10, 50)):
        ell = lengthscale_from_corr(c, d)
        assert np.exp(-0.5 * (d / ell) ** 2) == pytest.approx(c, abs=1e-12)


@pytest.mark.parametrize("c", [0.0, 1.0, -0.2])
def test_lengthscale_domain(c):
    """[TRIVIAL]"""
    with pytest.raises(ValueError):
        lengthscale_from_corr(c, 1.0)


def test_benchmark_configuration_sizes():
    """[PAPER] 6x6 grid, 10 steps: 12 training and 24 test stations, 360 rows per fidelity."""
    ds = generate(TABLE2_CONFIG.with_seed(1))
    assert len(ds.train_ids) == 12 and len(ds.test_ids) == 24
    assert len(ds.lf) == 360 and len(ds.hf) == 360
    assert len(ds.hf_train) == 120 and len(ds.hf_test) == 240
    assert TABLE2_CONFIG.n_train_stations == 12


def test_generate_is_deterministic():
    """[TRIVIAL]"""
    a, b = generate(SimConfig(seed=5)), generate(SimConfig(seed=5))
    np.testing.assert_array_equal(a.lf, b.lf)
    np.testing.assert_array_equal(a.hf, b.hf)
    assert not np.array_equal(a.lf, generate(SimConfig(seed=6)).lf)


def test_hf_relation():
    """[TRIVIAL] y_H = rho y_L + delta."""
    ds = generate(SimConfig(seed=2))
    np.testing.assert_allclose(ds.hf[:, 4], 0.6 * ds.lf[:, 3] + ds.truth["delta"], rtol=1e-14)
    np.testing.assert_array_equal(ds.hf[:, 1:4], ds.lf[:, :3])


def test_temporal_lag_one_correlation():
    """[DERIVED] Monte-Carlo: lag-1 correlation of d_L is the target 0.8."""
    vals = []
    cfg = SimConfig(n_space=2, n_time=10, sigma2_L=1.0)
    for seed in range(200):
        d = generate(cfg.with_seed(seed)).truth["d_L"].reshape(4, 10)[0]
        vals.append(d)
    X = np.array(vals)
    C = np.cov(X.T)
    lag1 = np.mean([C[i, i + 1] / np.sqrt(C[i, i] * C[i + 1, i + 1]) for i in range(9)])
    assert lag1 == pytest.approx(0.8, abs=0.05)


def test_degenerate_limit():
    """[TRIVIAL] rho = 0, no discrepancy, no noise: y_H near zero."""
    cfg = SimConfig(rho_true=0.0, sigma2_delta=0.0, noise_L=0.0, noise_delta=0.0, seed=3)
    ds = generate(cfg)
    assert np.linalg.norm(ds.hf[:, 4]) < 1e-2


def test_split_sizes():
    """[PAPER] 36 stations split 12/24 via the pinned training count."""
    tr, te = split_stations(np.arange(36), 0.3, 0, n_train=12)
    assert len(tr) == 12 and len(te) == 24
    assert set(tr) | set(te) == set(range(36)) and not set(tr) & set(te)


def test_split_fraction_rounds_half_up():
    """[TRIVIAL] 0.3 * 36 = 10.8 rounds to 11; 0.25 * 10 = 2.5 rounds to 3."""
    assert len(split_stations(np.arange(36), 0.3, 0)[0]) == 11
    assert len(split_stations(np.arange(10), 0.25, 0)[0]) == 3


def test_split_boundaries():
    """[TRIVIAL] at least one station on each side."""
    tr, te = split_stations(np.arange(5), 0.01, 0)
    assert len(tr) == 1 and len(te) == 4
    tr, te = split_stations(np.arange(5), 0.99, 0)
    assert len(tr) == 4 and len(te) == 1


def test_split_deterministic():
    """[TRIVIAL]"""
    a = split_stations(np.arange(36), 0.3, 9)
    b = split_stations(np.arange(36), 0.3, 9)
    np.testing.assert_array_equal(a[0], b[0])


def test_write_round_trip(tmp_path):
    """[TRIVIAL] CSVs and metadata sidecar."""
    ds = generate(SimConfig(seed=4))
    paths = ds.write(tmp_path)
    lf = np.loadtxt(paths["lf"], delimiter=",", skiprows=1)
    np.testing.assert_allclose(lf, ds.lf, rtol=1e-12)
    assert open(paths["hf_train"]).readline().strip() == "station_id,s1,s2,t,y_H"
    meta = json.loads(paths["metadata"].read_text())
    assert meta["config"]["seed"] == 4 and len(meta["train_ids"]) == 11


def test_true_params():
    """[TRIVIAL] amplitudes are the squared variances (both factors carry sigma^2)."""
    cfg = SimConfig()
    kl, kd, noise, rho = true_model_params(cfg)
    assert kl.sigma == pytest.approx(1.0 + cfg.jitter)
    assert kd.sigma == pytest.approx(4.0 + cfg.jitter)
    assert noise.var_hf == pytest.approx(0.1 + 0.36 * 0.1)
    assert rho == 0.6


def test_sample_variance_matches_squared_amplitude():
    """[DERIVED] Monte-Carlo: marginal variance of d_delta is sigma2_delta^2."""
    cfg = SimConfig(n_space=3, n_time=4, sigma2_delta=2.0)
    v = np.var(np.concatenate([generate(cfg.with_seed(s)).truth["d_delta"] for s in range(300)]))
    assert v == pytest.approx(4.0, rel=0.1)
