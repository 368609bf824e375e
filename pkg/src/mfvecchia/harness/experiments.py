"""Experiment drivers: cross-validation, validation tables, benchmarks, timing.

Every driver returns plain row dictionaries and, when given an output
directory, writes them as CSV (6 significant digits) as they are produced so
that partial results survive an interruption.
"""
from __future__ import annotations

import csv
import gc
import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..inference import (
    RECOVERABLE,
    MfProblem,
    OptimizationFailed,
    baseline_fit_predict,
    default_init,
    fit,
    predict,
)
from ..kernels import KernelParams
from ..meanmodel import GlsMode
from ..mfstruct import NoiseModel
from ..model import MfData, MfHyperParams, ModelConfig
from ..oracle import validate
from ..rho import RhoKind, constant, empirical_slopes, fit_empirical_gp, linear, paired_series, quadratic
from ..simulate import SimConfig, generate, true_model_params
from ..vecchia import Conditioning, Ordering, OrderingStrategy
from .config import ExperimentConfig
from .metrics import MetricSet, compute_metrics, mean_metrics, summarize

__all__ = [
    "CsvSink",
    "LeakError",
    "LosoResult",
    "build_rho",
    "emit_plot_data",
    "fit_from_config",
    "initial_params",
    "loso_cv",
    "run_orderings",
    "run_sparsity",
    "run_table1",
    "run_table2",
    "run_timing",
    "summary_rows",
]

log = logging.getLogger(__name__)

#: Marker written for undefined summary statistics (e.g. sd of one value).
ABSENT = "NA"


class LeakError(AssertionError):
    """Held-out HF data reached a training structure."""


def fmt(v):
    if v is None:
        return ABSENT
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return ABSENT if not np.isfinite(v) else f"{float(v):.6g}"
    return str(v)


class CsvSink:
    """Append rows to a CSV file, flushing after each row."""

    def __init__(self, path, fields):
        self.path = Path(path) if path is not None else None
        self.fields = list(fields)
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", newline="", encoding="utf-8")
            self._w = csv.DictWriter(self._fh, fieldnames=self.fields, extrasaction="ignore")
            self._w.writeheader()
            self._fh.flush()

    def write(self, row: dict):
        if self._fh is not None:
            self._w.writerow({k: fmt(row.get(k)) for k in self.fields})
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_rows(path, rows, fields=None):
    rows = list(rows)
    fields = fields or (list(rows[0].keys()) if rows else [])
    with CsvSink(path, fields) as sink:
        for r in rows:
            sink.write(r)


def summary_rows(rows, keys, metrics):
    """Mean/sd per group; sd is ``None`` (written as NA) for single values."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for g, rs in groups.items():
        row = dict(zip(keys, g))
        row["n_rep"] = len(rs)
        for m in metrics:
            mu, sd = summarize([float(r[m]) for r in rs if r.get(m) is not None])
            row[f"{m}_mean"] = mu
            row[f"{m}_sd"] = sd
        out.append(row)
    return out


# ----------------------------------------------------------------- models


def build_rho(cfg: ExperimentConfig, data: MfData):
    kind = RhoKind(cfg["rho"]["kind"])
    r0 = cfg["rho"]["init"]
    if kind is RhoKind.EMPIRICAL:
        pairs = paired_series(data.lf_points, data.y_lf, data.hf_points, data.y_hf, data.hf_station)
        slopes, coords, _ = empirical_slopes(pairs)
        return fit_empirical_gp(slopes, coords)
    if kind is RhoKind.CONSTANT:
        return constant(0.0 if r0 is None else r0)
    if kind is RhoKind.LINEAR:
        return linear(0.0 if r0 is None else r0, 0.0, 0.0)
    return quadratic(0.0 if r0 is None else r0, 0.0, 0.0)


def initial_params(cfg: ExperimentConfig, data: MfData) -> MfHyperParams:
    """Data-driven starting point, overridden by any values set in ``[kernel]``."""
    rho = build_rho(cfg, data)
    if rho.kind is RhoKind.CONSTANT and cfg["rho"]["init"] is None:
        rho = None
    base = default_init(data, rho)
    k = cfg["kernel"]
    kl, kd, nz = base.kernel_lf, base.kernel_delta, base.noise

    def pick(v, d):
        return d if v is None else v

    return MfHyperParams(
        KernelParams(pick(k["sigma_lf"], kl.sigma), pick(k["ls_lf"], kl.length_space),
                     pick(k["lt_lf"], kl.length_time)),
        KernelParams(pick(k["sigma_delta"], kd.sigma), pick(k["ls_delta"], kd.length_space),
                     pick(k["lt_delta"], kd.length_time)),
        NoiseModel(pick(k["g2_lf"], nz.var_lf), pick(k["g2_hf"], nz.var_hf)),
        base.rho,
    )


def fit_from_config(cfg: ExperimentConfig, data: MfData, model: ModelConfig | None = None):
    model = model or cfg.model_config()
    return fit(data, model, initial_params(cfg, data), **cfg.optimizer_kwargs())


# ------------------------------------------------------------------- LOSO


@dataclass
class LosoResult:
    per_station: dict
    aggregate: MetricSet | None
    failed: dict = field(default_factory=dict)
    predictions: dict = field(default_factory=dict)

    @property
    def partial(self) -> bool:
        return bool(self.failed)


def _check_no_leak(train: MfData, held_points: np.ndarray, problem: MfProblem | None = None):
    held = {tuple(p) for p in np.asarray(held_points).tolist()}
    structures = [train.hf_points]
    if problem is not None:
        structures += [problem.layout.hf_points]
        if problem.pts_hf is not None:
            structures.append(problem.pts_hf)
    for arr in structures:
        if any(tuple(p) in held for p in np.asarray(arr).tolist()):
            raise LeakError("held-out HF rows found in a training structure")


def loso_cv(data: MfData, cfg: ExperimentConfig, model: str = "mfgp", stations=None,
            model_config: ModelConfig | None = None) -> LosoResult:
    """Leave-one-station-out cross-validation over HF stations.

    For every station the model is refitted on all LF rows plus the HF rows of
    the other stations, then predicts the held-out station's full series.
    Folds that fail are recorded and excluded from the aggregate.
    """
    if data.hf_station is None:
        raise ValueError("LOSO needs HF station labels")
    ids = list(dict.fromkeys(data.hf_station.tolist())) if stations is None else list(stations)
    if len(set(data.hf_station.tolist())) < 2:
        raise ValueError("LOSO needs at least two HF stations")
    mc = model_config or cfg.model_config()
    per, failed, preds = {}, {}, {}
    for sid in ids:
        mask = data.hf_station == sid
        held_pts, held_y = data.hf_points[mask], data.y_hf[mask]
        train = data.without_stations(sid)
        try:
            if model == "mfgp":
                prob = MfProblem(train, mc)
                _check_no_leak(train, held_pts, prob)
                fr = fit(train, mc, initial_params(cfg, train), **cfg.optimizer_kwargs())
                pred = predict(fr, train, mc, held_pts)
                nl = fr.nlml
            else:
                _check_no_leak(train, held_pts)
                pred = baseline_fit_predict(model, train, held_pts)
                nl = float("nan")
        except LeakError:
            raise
        except (OptimizationFailed, ValueError, *RECOVERABLE) as exc:
            warnings.warn(f"LOSO fold {sid!r} failed: {exc}", RuntimeWarning, stacklevel=2)
            failed[sid] = str(exc)
            continue
        per[sid] = compute_metrics(held_y, pred.mean, pred.variance, nl)
        preds[sid] = (held_pts, held_y, pred)
    agg = mean_metrics(per.values()) if per else None
    if failed:
        warnings.warn(f"{len(failed)} LOSO fold(s) excluded from the aggregate", RuntimeWarning,
                      stacklevel=2)
    return LosoResult(per, agg, failed, preds)


# ----------------------------------------------------------- experiments


def _sim(cfg: ExperimentConfig, rep: int, **over) -> SimConfig:
    sc = cfg.sim_config(seed=cfg["experiment"]["seed"] + rep)
    return replace(sc, **over) if over else sc


def _train_data(ds) -> MfData:
    return MfData.from_tables(ds.lf, ds.hf_train)


TABLE1_FIELDS = ["replication", "seed", "conditioning", "m", "rel_kinv_y", "rel_logdet",
                 "rel_quadform", "diff_abs", "diff_rel", "rmse", "rmse_exact", "nnz_R"]
TABLE1_METRICS = ["rel_kinv_y", "rel_logdet", "rel_quadform", "rmse", "rmse_exact"]


def run_table1(cfg: ExperimentConfig, out_dir=None, ordering: str = "space-major"):
    """Vecchia vs exact at hyperparameters fixed to the exact-model fit.

    For each replication the exact model is fitted once; every (conditioning,
    m) pair is then evaluated at those parameters.
    """
    e = cfg["experiment"]
    gls = GlsMode(cfg["gls"]["mode"], reml=cfg["gls"]["reml"])
    rows = []
    sink = CsvSink(Path(out_dir) / "report_table1.csv" if out_dir else None, TABLE1_FIELDS)
    for rep in range(e["replications"]):
        sc = _sim(cfg, rep)
        ds = generate(sc)
        data = _train_data(ds)
        test = ds.hf_test
        exact_cfg = ModelConfig(exact=True, gls=gls)
        fr = fit(data, exact_cfg, initial_params(cfg, data), **cfg.optimizer_kwargs())
        pe = predict(fr, data, exact_cfg, test[:, 1:4])
        rmse_exact = float(np.sqrt(np.mean((pe.mean - test[:, 4]) ** 2)))
        for cond in e["conditionings"]:
            for m in e["m_grid"]:
                mc = ModelConfig(m=m, ordering=OrderingStrategy(Ordering(ordering), sc.seed),
                                 conditioning=Conditioning(cond), gls=gls)
                rep_ = validate(data, fr.params, mc, test[:, 1:4], test[:, 4])
                row = rep_.row(rep, sc.seed, mc)
                row["rmse_exact"] = rmse_exact
                rows.append(row)
                sink.write(row)
        log.info("table1 replication %d done", rep)
    sink.close()
    summ = summary_rows(rows, ["conditioning", "m"], TABLE1_METRICS)
    if out_dir:
        write_rows(Path(out_dir) / "summary_table1.csv", summ)
    return rows, summ


TABLE2_FIELDS = ["replication", "seed", "model", "mae", "rmse", "corr", "cov95", "nlml",
                 "converged", "seconds"]


def run_table2(cfg: ExperimentConfig, out_dir=None):
    """Predictive benchmark at held-out stations: exact MFGP, Vecchia MFGP, baselines."""
    e = cfg["experiment"]
    vc = cfg.model_config()
    exact_cfg = replace(vc, exact=True)
    rows = []
    sink = CsvSink(Path(out_dir) / "report_table2.csv" if out_dir else None, TABLE2_FIELDS)
    for rep in range(e["replications"]):
        sc = _sim(cfg, rep)
        ds = generate(sc)
        data = _train_data(ds)
        test = ds.hf_test
        X, y = test[:, 1:4], test[:, 4]
        models = []
        if e["classic"]:
            models.append(("classic", exact_cfg))
        models.append(("vecchia", vc))
        for name, mc in models:
            t0 = time.perf_counter()
            try:
                fr = fit(data, mc, initial_params(cfg, data), **cfg.optimizer_kwargs())
                p = predict(fr, data, mc, X)
            except (OptimizationFailed, *RECOVERABLE) as exc:
                warnings.warn(f"{name} failed in replication {rep}: {exc}", RuntimeWarning)
                continue
            ms = compute_metrics(y, p.mean, p.variance, fr.nlml)
            row = {"replication": rep, "seed": sc.seed, "model": name, **ms.as_dict(),
                   "converged": fr.converged, "seconds": time.perf_counter() - t0}
            rows.append(row)
            sink.write(row)
        for kind in e["baselines"]:
            t0 = time.perf_counter()
            p = baseline_fit_predict(kind, data, X, cap=e["dense_cap"], seed=sc.seed)
            ms = compute_metrics(y, p.mean, p.variance)
            row = {"replication": rep, "seed": sc.seed, "model": kind, **ms.as_dict(),
                   "converged": None, "seconds": time.perf_counter() - t0}
            rows.append(row)
            sink.write(row)
        log.info("table2 replication %d done", rep)
    sink.close()
    summ = summary_rows(rows, ["model"], ["mae", "rmse", "cov95", "corr"])
    if out_dir:
        write_rows(Path(out_dir) / "summary_table2.csv", summ)
    return rows, summ


#: Time steps of the ordering/sparsity configuration (720 points per fidelity on 6x6).
ORDERING_N_TIME = 20
#: Conditioning rule of the ordering/sparsity studies.
ORDERING_CONDITIONING = "nn"


def _sparsity_sim(cfg: ExperimentConfig, rep: int, n_time: int | None = None) -> SimConfig:
    # every station observed at both fidelities
    over = {"train_fraction": 0.5, "n_train_stations": None}
    if n_time is not None:
        over["n_time"] = n_time
    return _sim(cfg, rep, **over)


def full_hf_data(ds) -> MfData:
    return MfData.from_tables(ds.lf, ds.hf)


SPARSITY_FIELDS = ["ordering", "m", "n_lf", "n_hf", "dim_H", "nnz_H", "density_H", "nnz_cholH"]


def run_sparsity(cfg: ExperimentConfig, out_dir=None, m: int = 15,
                 n_time: int | None = ORDERING_N_TIME,
                 conditioning: str = ORDERING_CONDITIONING):
    """Nonzeros of ``H`` and of its Cholesky factor per ordering (generating parameters).

    ``n_time=None`` keeps the configured grid.
    """
    e = cfg["experiment"]
    sc = _sparsity_sim(cfg, 0, n_time)
    ds = generate(sc)
    data = full_hf_data(ds)
    kl, kd, nz, r = true_model_params(sc)
    params = MfHyperParams(kl, kd, nz, constant(r))
    rows = []
    for o in e["orderings"]:
        mc = ModelConfig(m=m, ordering=OrderingStrategy(Ordering(o), sc.seed),
                         conditioning=Conditioning(conditioning), gls=GlsMode("none"))
        sysm = MfProblem(data, mc).system(params)
        rep = sysm.sparsity_report()
        rows.append({"ordering": o, "m": m, "n_lf": data.n_lf, "n_hf": data.n_hf,
                     "dim_H": sysm.H.shape[0], **rep})
    if out_dir:
        write_rows(Path(out_dir) / "report_sparsity.csv", rows, SPARSITY_FIELDS)
    return rows


ORDERING_FIELDS = ["replication", "seed", "ordering", "conditioning", "m", "diff_abs",
                   "diff_rel", "rel_logdet", "rel_kinv_y", "nnz_R"]


def run_orderings(cfg: ExperimentConfig, out_dir=None, m_grid=(10, 15, 20, 30, 40),
                  n_time: int | None = ORDERING_N_TIME,
                  conditioning: str = ORDERING_CONDITIONING, gls: GlsMode | None = None):
    """NLML error of Vecchia vs exact per ordering and m, at generating parameters.

    The likelihoods are compared without a mean model unless ``gls`` is given.
    """
    e = cfg["experiment"]
    gls = gls if gls is not None else GlsMode("none")
    cond = Conditioning(conditioning)
    rows = []
    sink = CsvSink(Path(out_dir) / "report_orderings.csv" if out_dir else None, ORDERING_FIELDS)
    for rep in range(e["replications"]):
        sc = _sparsity_sim(cfg, rep, n_time)
        ds = generate(sc)
        data = full_hf_data(ds)
        kl, kd, nz, r = true_model_params(sc)
        params = MfHyperParams(kl, kd, nz, constant(r))
        for o in e["orderings"]:
            for m in m_grid:
                mc = ModelConfig(m=m, ordering=OrderingStrategy(Ordering(o), sc.seed),
                                 conditioning=cond, gls=gls)
                v = validate(data, params, mc)
                row = v.row(rep, sc.seed, mc)
                rows.append(row)
                sink.write(row)
        log.info("orderings replication %d done", rep)
    sink.close()
    summ = summary_rows(rows, ["ordering", "m"], ["diff_abs", "diff_rel", "nnz_R"])
    if out_dir:
        write_rows(Path(out_dir) / "summary_orderings.csv", summ)
    return rows, summ


TIMING_FIELDS = ["n", "n_lf", "n_hf", "m", "seconds_vecchia", "seconds_dense"]


def _timed(fn, repeats):
    fn()  # warm-up (JIT, caches)
    ts = []
    gc.collect()
    enabled = gc.isenabled()
    gc.disable()  # as timeit does; collector pauses are not part of the cost
    try:
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            ts.append(time.perf_counter() - t0)
    finally:
        if enabled:
            gc.enable()
    return float(np.median(ts))


def run_timing(cfg: ExperimentConfig, out_dir=None, sizes=((5, 40), (5, 80)), m: int = 15,
               repeats: int = 5, dense_max: int = 2500):
    """Median NLML evaluation time for nested designs of growing size.

    ``sizes`` lists ``(n_space, n_time)``; every point is observed at both
    fidelities so ``n = 2 * n_space**2 * n_time``.
    """
    rows = []
    for ns, nt in sizes:
        sc = replace(cfg.sim_config(seed=cfg["experiment"]["seed"]), n_space=ns, n_time=nt,
                     train_fraction=0.5, n_train_stations=None)
        ds = generate(sc)
        data = full_hf_data(ds)
        kl, kd, nz, r = true_model_params(sc)
        params = MfHyperParams(kl, kd, nz, constant(r))
        mc = ModelConfig(m=m, gls=GlsMode(cfg["gls"]["mode"], reml=cfg["gls"]["reml"]))
        prob = MfProblem(data, mc)
        tv = _timed(lambda: prob.nlml(params), repeats)
        td = float("nan")
        if data.n <= dense_max:
            pd_ = MfProblem(data, replace(mc, exact=True))
            td = _timed(lambda: pd_.nlml(params), max(1, repeats // 2))
        rows.append({"n": data.n, "n_lf": data.n_lf, "n_hf": data.n_hf, "m": m,
                     "seconds_vecchia": tv, "seconds_dense": td})
    if out_dir:
        write_rows(Path(out_dir) / "report_timing.csv", rows, TIMING_FIELDS)
    return rows


# -------------------------------------------------------------- plot data


def emit_plot_data(out_dir, *, curves=None, loso: LosoResult | None = None,
                   station_names=None) -> dict:
    """Tidy CSVs for figures.

    ``curves``: summary rows with ``ordering``/``conditioning``/``m`` keys
    (written as ``plot_error_vs_m.csv``).  ``loso``: per-station predicted
    series (written as ``plot_station_series.csv``).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    if curves:
        keys = [k for k in ("ordering", "conditioning", "m") if k in curves[0]]
        rest = [k for k in curves[0] if k not in keys]
        ordered = sorted(curves, key=lambda r: tuple(str(r[k]) if k != "m" else int(r[k]) for k in keys))
        paths["error_vs_m"] = out / "plot_error_vs_m.csv"
        write_rows(paths["error_vs_m"], ordered, keys + rest)
    if loso is not None:
        rows = []
        for sid in sorted(loso.predictions, key=str):
            pts, y, pred = loso.predictions[sid]
            name = station_names[sid] if station_names is not None else sid
            order = np.argsort(pts[:, 2], kind="stable")
            for i in order:
                rows.append({"station_id": name, "t": pts[i, 2], "observed": y[i],
                             "predicted": pred.mean[i], "lower95": pred.lower[i],
                             "upper95": pred.upper[i]})
        paths["station_series"] = out / "plot_station_series.csv"
        write_rows(paths["station_series"], rows,
                   ["station_id", "t", "observed", "predicted", "lower95", "upper95"])
    return paths
