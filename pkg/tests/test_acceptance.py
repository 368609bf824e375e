"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected in ``conftest.ACCEPTANCE_LINES`` and shown in
the terminal summary.  Long experiments (criteria 3, 4 and 6) take several
minutes each on one core.
"""
from __future__ import annotations

import time
from collections import defaultdict

import numpy as np
import pytest
from scipy import stats
from scipy.linalg import block_diag

from conftest import ACCEPTANCE_LINES, grid_points, mixed_data, small_params
from mfvecchia import (
    Conditioning,
    GlsMode,
    KernelParams,
    MfData,
    MfHyperParams,
    MfProblem,
    ModelConfig,
    NoiseModel,
    Ordering,
    OrderingStrategy,
    constant,
    linear,
    nlml,
)
from mfvecchia.harness.config import load_config
from mfvecchia.harness.experiments import (
    LeakError,
    _check_no_leak,
    loso_cv,
    run_orderings,
    run_sparsity,
    run_table1,
    run_table2,
    run_timing,
)
from mfvecchia.kernels import latent_cov
from mfvecchia.meanmodel import gaussian_nlml
from mfvecchia.mfstruct import build_layout
from mfvecchia.oracle import DenseSystem, dense_K, dense_nlml
from mfvecchia.rho import empirical_slopes, fit_empirical_gp, paired_series
from mfvecchia.simulate import generate, true_model_params

pytestmark = pytest.mark.acceptance

#: Optimiser restarts used by the fitted experiments (criteria 3, 4 and 10).
RESTARTS = 1


def report(n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def egp_rho(data):
    pairs = paired_series(data.lf_points, data.y_lf, data.hf_points, data.y_hf, data.hf_station)
    pairs = {k: v for k, v in pairs.items() if len(v[1]) >= 3}
    s, c, _ = empirical_slopes(pairs)
    return fit_empirical_gp(s, c)


def woodbury_dense(data, p):
    """``A Sigma_w A^T + D`` from the incidence matrices and exact latent covariances."""
    lay = build_layout(data.lf_points, data.hf_points)
    Z1, Z21 = lay.Z1().toarray(), lay.Z21().toarray()
    R = np.diag(p.rho_at(data.hf_points))
    A = np.block([[Z1, np.zeros((data.n_lf, data.n_hf))], [R @ Z21, np.eye(data.n_hf)]])
    Sw = block_diag(latent_cov(lay.latent_points, p.kernel_lf),
                    latent_cov(data.hf_points, p.kernel_delta))
    D = np.r_[np.full(data.n_lf, p.noise.var_lf), np.full(data.n_hf, p.noise.var_hf)]
    return A @ Sw @ A.T + np.diag(D)


def means(summary, key, metric):
    return {tuple(r[k] for k in key): r[f"{metric}_mean"] for r in summary}


def paired_increase(rows, group, metric, m_grid):
    """Consecutive m pairs whose paired one-sided t-test shows an increase (5% level)."""
    by = defaultdict(dict)
    for r in rows:
        by[(r[group], r["m"])][r["replication"]] = r[metric]
    bad = []
    for g in sorted({r[group] for r in rows}):
        for a, b in zip(m_grid, m_grid[1:]):
            reps = sorted(by[(g, a)])
            d = np.array([by[(g, b)][k] - by[(g, a)][k] for k in reps])
            if d.mean() <= 0:
                continue
            t = d.mean() / (d.std(ddof=1) / np.sqrt(len(d))) if d.std(ddof=1) > 0 else np.inf
            if t > stats.t.ppf(0.95, len(d) - 1):
                bad.append(f"{g} {metric} m{a}->m{b} (+{d.mean():.3g}, t={t:.2f})")
    return bad


# ---------------------------------------------------------------------------


def test_criterion_1_exactness():
    """[DERIVED] m = n - 1 Vecchia NLML equals dense NLML for every combination."""
    t0 = time.perf_counter()
    data = mixed_data(seed=21, n_lf_loc=12, n_hf_loc=8, n_time=10, extra_hf=2)
    assert data.n <= 300
    rhos = {"constant": constant(0.7), "linear": linear(0.5, 0.08, -0.05), "egp": egp_rho(data)}
    worst, n_cases = 0.0, 0
    for ordering in Ordering:
        for cond in Conditioning:
            for gls in ("none", "global", "adaptive"):
                for rho in rhos.values():
                    p = small_params(rho)
                    cfg = ModelConfig(m=data.n - 1, ordering=OrderingStrategy(ordering, 5),
                                      conditioning=cond, gls=GlsMode(gls))
                    ref, _ = dense_nlml(data, p, cfg.gls)
                    worst = max(worst, abs(nlml(p, data, cfg) - ref) / abs(ref))
                    n_cases += 1
    secs = time.perf_counter() - t0
    ok = worst <= 1e-8 and secs < 120 and n_cases == 72
    report(1, ok, f"n={data.n} cases={n_cases} max_rel={worst:.2e} (<=1e-8) time={secs:.0f}s")
    assert ok


def test_criterion_2_decomposition_identity():
    """[DERIVED] decomposed covariance, solves and log-determinant against dense K."""
    t0 = time.perf_counter()
    data = mixed_data(seed=22, n_lf_loc=12, n_hf_loc=8, n_time=10)
    assert data.n <= 300
    errs = {"K": 0.0, "solve": 0.0, "logdet": 0.0}
    for rho in (constant(0.6), linear(0.4, 0.1, -0.05), egp_rho(data)):
        p = small_params(rho)
        for ordering in Ordering:
            s = MfProblem(data, ModelConfig(m=10_000, ordering=OrderingStrategy(ordering, 1),
                                            gls=GlsMode("none"))).system(p)
            K = dense_K(data, p)
            errs["K"] = max(errs["K"], float(np.max(np.abs(woodbury_dense(data, p) - K))))
            V = np.random.default_rng(0).normal(size=(data.n, 4))
            ref = np.linalg.solve(K, V)
            errs["solve"] = max(errs["solve"],
                                np.linalg.norm(s.solve_K(V) - ref) / np.linalg.norm(ref))
            ld = np.linalg.slogdet(K)[1]
            errs["logdet"] = max(errs["logdet"], abs(s.logdet_K() - ld) / abs(ld))
    secs = time.perf_counter() - t0
    ok = errs["K"] < 1e-10 and errs["solve"] < 1e-8 and errs["logdet"] < 1e-8 and secs < 60
    report(2, ok, f"max|dK|={errs['K']:.1e} solve={errs['solve']:.1e} "
                  f"logdet={errs['logdet']:.1e} time={secs:.0f}s")
    assert ok


def test_criterion_3_table1_corridor(tmp_path):
    """[PAPER] Vecchia vs exact relative errors over 20 replications."""
    t0 = time.perf_counter()
    cfg = load_config(None, {"experiment.replications": "20",
                             "optimizer.restarts": str(RESTARTS)})
    rows, summ = run_table1(cfg, tmp_path)
    secs = time.perf_counter() - t0
    grid = list(cfg["experiment"]["m_grid"])
    bad_a = []
    for metric in ("rel_kinv_y", "rel_logdet", "rel_quadform"):
        bad_a += paired_increase(rows, "conditioning", metric, grid)
    ld = means(summ, ("conditioning", "m"), "rel_logdet")
    kinv = means(summ, ("conditioning", "m"), "rel_kinv_y")
    bad_b = [m for m in grid if not ld[("corr", m)] < ld[("nn", m)]]
    c30, c60 = ld[("corr", 30)], kinv[("corr", 60)]
    ok_c = c30 < 0.05 and c60 < 0.15
    ok = not bad_a and not bad_b and ok_c and secs < 900
    report(3, ok, f"(a) increases={bad_a or 'none'}; (b) corr>=nn at m={bad_b or 'none'}; "
                  f"(c) corr m30 rel_logdet={c30:.4f} (<0.05), corr m60 rel_kinv={c60:.4f} "
                  f"(<0.15); time={secs:.0f}s")
    assert ok


@pytest.fixture(scope="module")
def table2(tmp_path_factory):
    cfg = load_config(None, {"optimizer.restarts": str(RESTARTS)})
    t0 = time.perf_counter()
    _, summ = run_table2(cfg, tmp_path_factory.mktemp("table2"))
    return {r["model"]: r for r in summ}, time.perf_counter() - t0


def test_criterion_4_table2(table2):
    """[PAPER] predictive benchmark: 30 replications, held-out stations."""
    s, secs = table2
    mae = {k: v["mae_mean"] for k, v in s.items()}
    cov = {k: v["cov95_mean"] for k, v in s.items()}
    baselines = ("gp-l", "gp-3d", "gp-4d")
    checks = {
        "classic MAE in 1.343+-0.4": abs(mae["classic"] - 1.343) <= 0.4,
        "vecchia MAE in 1.527+-0.4": abs(mae["vecchia"] - 1.527) <= 0.4,
        "vecchia within 25% of classic": mae["vecchia"] <= 1.25 * mae["classic"],
        "gp-3d MAE in 2.143+-0.5": abs(mae["gp-3d"] - 2.143) <= 0.5,
        "classic < vecchia < baselines": (mae["classic"] < mae["vecchia"]
                                          < min(mae[b] for b in baselines)),
        "vecchia COV95 in [0.90,1.00]": 0.90 <= cov["vecchia"] <= 1.00,
        "baseline COV95 < 0.85": all(cov[b] < 0.85 for b in baselines),
        "runtime < 45 min": secs < 2700,
    }
    failed = [k for k, v in checks.items() if not v]
    vals = " ".join(f"{k}:{mae[k]:.3f}/{cov[k]:.3f}" for k in mae)
    report(4, not failed, f"MAE/COV95 {vals}; failed={failed or 'none'}; time={secs:.0f}s")
    assert not failed


def test_criterion_5_sparsity(tmp_path):
    """[PAPER] nonzeros of H and chol(H) on the 720 + 720 configuration."""
    t0 = time.perf_counter()
    rows = {r["ordering"]: r for r in run_sparsity(load_config(), tmp_path, m=15)}
    secs = time.perf_counter() - t0
    sm, tm = rows["space-major"], rows["time-major"]
    assert sm["n_lf"] == 720 and sm["n_hf"] == 720
    e_h = sm["nnz_H"] / 81_084 - 1
    e_c = sm["nnz_cholH"] / 317_440 - 1
    ok = abs(e_h) <= 0.10 and abs(e_c) <= 0.15 and tm["nnz_H"] >= sm["nnz_H"] and secs < 300
    report(5, ok, f"space-major nnz_H={sm['nnz_H']} ({e_h:+.1%}) nnz_cholH={sm['nnz_cholH']} "
                  f"({e_c:+.1%}); time-major nnz_H={tm['nnz_H']}; time={secs:.0f}s")
    assert ok


def test_criterion_6_orderings(tmp_path):
    """[PAPER] NLML error per ordering over 20 replications."""
    t0 = time.perf_counter()
    cfg = load_config(None, {"experiment.replications": "20"})
    _, summ = run_orderings(cfg, tmp_path, m_grid=(10, 15, 20, 30, 40))
    secs = time.perf_counter() - t0
    dr = means(summ, ("ordering", "m"), "diff_rel")
    tm40 = dr[("time-major", 40)]
    worse = [o for o in cfg["experiment"]["orderings"] if not dr[(o, 40)] < dr[(o, 10)]]
    ok = tm40 < 0.02 and not worse and secs < 1200
    detail = " ".join(f"{o}:{dr[(o, 10)]:.4f}->{dr[(o, 40)]:.4f}"
                      for o in cfg["experiment"]["orderings"])
    report(6, ok, f"time-major m40 diffRel={tm40:.4f} (<0.02); m10->m40 {detail}; "
                  f"not decreasing={worse or 'none'}; time={secs:.0f}s")
    assert ok


def test_criterion_7_gls_properties():
    """[DERIVED] offset recovery, residual orthogonality and shift invariance."""
    t0 = time.perf_counter()
    cfg = load_config()
    beta_true = np.array([3.0, -2.0])
    # exact factors test the GLS algebra; Vecchia m = 40 coverage is reported alongside
    configs = {"exact": ModelConfig(exact=True, gls=GlsMode("global")),
               "m40": ModelConfig(m=40, gls=GlsMode("global"))}
    hits = {k: np.zeros(2, int) for k in configs}
    for rep in range(50):
        sc = cfg.sim_config(seed=100 + rep)
        ds = generate(sc)
        clean = MfData.from_tables(ds.lf, ds.hf_train)
        data = MfData(clean.lf_points, clean.y_lf + beta_true[0], clean.hf_points,
                      clean.y_hf + beta_true[1], clean.hf_station)
        truth = MfHyperParams(*true_model_params(sc)[:3], constant(sc.rho_true))
        for k, mc in configs.items():
            _, _, f = MfProblem(data, mc).nlml(truth)
            hits[k] += np.abs(f.beta_hat - beta_true) <= 2 * f.beta_se
    frac = hits["exact"] / 50
    frac_v = hits["m40"] / 50

    data = mixed_data(seed=23)
    params = small_params()
    orth, shift = 0.0, 0.0
    for kind in ("global", "adaptive"):
        pr = MfProblem(data, ModelConfig(m=20, gls=GlsMode(kind)))
        v0, sysm, f0 = pr.nlml(params)
        orth = max(orth, np.linalg.norm(pr.design.G.T @ f0.kinv_residual) / np.linalg.norm(data.y))
        y1 = data.y + np.r_[np.full(data.n_lf, 4.0), np.full(data.n_hf, -2.5)]
        v1, _ = gaussian_nlml(sysm, y1, pr.config.gls, pr.design)
        shift = max(shift, abs(v1 - v0) / max(1.0, abs(v0)))
    secs = time.perf_counter() - t0
    ok = bool(np.all(frac >= 0.9)) and orth < 1e-8 and shift < 1e-10 and secs < 600
    report(7, ok, f"within 2 SE: {frac.tolist()} (>=0.9; Vecchia m=40: {frac_v.tolist()}); orthogonality={orth:.1e} (<1e-8); "
                  f"shift={shift:.1e} (<1e-10); time={secs:.0f}s")
    assert ok


def test_criterion_8_psd_stability():
    """[DERIVED] random eGP couplings: H and dense K_HH always factor."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    failures = []
    for trial in range(100):
        locs = rng.uniform(0, 5, size=(int(rng.integers(4, 10)), 2))
        pts = grid_points(locs, np.sort(rng.uniform(0, 1, size=int(rng.integers(3, 7)))))
        rho = fit_empirical_gp(rng.normal(0.5, 1.0, size=len(locs)), locs, seed=trial)
        n_hf = int(rng.integers(3, len(pts)))
        hf = pts[rng.choice(len(pts), n_hf, replace=False)]
        data = MfData(pts, rng.normal(size=len(pts)), hf, rng.normal(size=n_hf))
        p = MfHyperParams(
            KernelParams(rng.uniform(0.3, 3), rng.uniform(0.3, 4), rng.uniform(0.05, 1)),
            KernelParams(rng.uniform(0.3, 3), rng.uniform(0.3, 4), rng.uniform(0.05, 1)),
            NoiseModel(rng.uniform(1e-3, 0.5), rng.uniform(1e-3, 0.5)), rho)
        try:
            s = MfProblem(data, ModelConfig(m=int(rng.integers(2, 40)))).system(p)
            assert np.isfinite(s.logdet_K())
            K = dense_K(data, p)
            DenseSystem(K[data.n_lf:, data.n_lf:])
        except Exception as exc:  # noqa: BLE001 - every failure counts
            failures.append(f"{trial}: {type(exc).__name__}")
    secs = time.perf_counter() - t0
    ok = not failures and secs < 300
    report(8, ok, f"100 configurations, failures={failures or 'none'}; time={secs:.0f}s")
    assert ok


def test_criterion_9_scaling(tmp_path):
    """[PAPER] likelihood time at n = 4000 vs n = 2000, m = 15.

    n doubles by doubling the series length at a fixed 5 x 5 station network.
    The ratio for a 10 x 10 network with 10 vs 20 steps is reported alongside.
    """
    t0 = time.perf_counter()
    cfg = load_config(None, {"gls.mode": "none"})
    rows = run_timing(cfg, tmp_path, sizes=((5, 40), (5, 80)), m=15, repeats=15, dense_max=0)
    wide = run_timing(cfg, None, sizes=((10, 10), (10, 20)), m=15, repeats=9, dense_max=0)
    secs = time.perf_counter() - t0
    assert [r["n"] for r in rows] == [2000, 4000]
    ratio = rows[1]["seconds_vecchia"] / rows[0]["seconds_vecchia"]
    wide_ratio = wide[1]["seconds_vecchia"] / wide[0]["seconds_vecchia"]
    ok = ratio < 2.5 and secs < 300
    report(9, ok, f"t(2000)={rows[0]['seconds_vecchia']:.3f}s t(4000)="
                  f"{rows[1]['seconds_vecchia']:.3f}s ratio={ratio:.2f} (<2.5); "
                  f"10x10 network 10->20 steps ratio={wide_ratio:.2f}; time={secs:.0f}s")
    assert ok


def test_criterion_10_loso_on_simulator(table2):
    """[TRIVIAL] LOSO leak invariant on simulator data, and MFGP beats GP-3D on Table 2 means."""
    cfg = load_config(None, {"optimizer.restarts": "0", "optimizer.maxfev": "150",
                             "vecchia.m": "20"})
    ds = generate(cfg.sim_config(seed=3))
    data = MfData.from_tables(ds.lf, ds.hf_train)
    res = loso_cv(data, cfg, "mfgp", stations=list(dict.fromkeys(data.hf_station))[:3])
    finite = res.aggregate is not None and np.isfinite(res.aggregate.mae)
    try:
        _check_no_leak(data, data.hf_points[data.hf_station == data.hf_station[0]])
        leak_caught = False
    except LeakError:
        leak_caught = True
    s, _ = table2
    beats = s["vecchia"]["mae_mean"] < s["gp-3d"]["mae_mean"]
    ok = finite and leak_caught and not res.failed and beats
    report(10, ok, f"LOSO folds={len(res.per_station)} finite={finite} leak check fires="
                   f"{leak_caught}; Table 3 real data not reproduced (not available); "
                   f"MFGP MAE {s['vecchia']['mae_mean']:.3f} < GP-3D {s['gp-3d']['mae_mean']:.3f}"
                   f" = {beats}")
    assert ok
