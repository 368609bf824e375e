"""Command-line entry point (``mfvecchia``).

Exit codes: 0 success, 1 configuration/schema error, 2 numerical failure,
3 partial result (some cross-validation folds failed).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

#: Environment variable limiting numerical threads.
THREADS_ENV = "MFVECCHIA_THREADS"

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 1, 2, 3


def _limit_threads():
    n = os.environ.get(THREADS_ENV)
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMBA_NUM_THREADS"):
            os.environ[var] = n


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="INI configuration file")
    common.add_argument("-s", "--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a configuration value (repeatable)")
    common.add_argument("-o", "--out", help="output directory (default [data] output_dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--lf", help="LF CSV (s1,s2,t,y_L); default [data] lf_path")
    data.add_argument("--hf", help="HF CSV (station_id,s1,s2,t,y_H); default [data] hf_path")

    p = argparse.ArgumentParser(prog="mfvecchia",
                                description="Multi-fidelity spatio-temporal GP with Vecchia "
                                            "likelihoods.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="generate a synthetic data set")
    s.add_argument("--seed", type=int, help="simulator seed (default [experiment] seed)")
    sub.add_parser("fit", parents=[common, data], help="fit hyperparameters")
    s = sub.add_parser("predict", parents=[common, data], help="predict HF values at targets")
    s.add_argument("--targets", required=True, help="CSV with columns s1,s2,t")
    s.add_argument("--params", help="params.json from 'fit' (otherwise fit first)")
    s = sub.add_parser("loso", parents=[common, data], help="leave-one-station-out CV")
    s.add_argument("--model", default="mfgp", choices=["mfgp", "gp-l", "gp-3d", "gp-4d"])
    sub.add_parser("validate", parents=[common], help="Vecchia vs exact validation table")
    sub.add_parser("benchmark", parents=[common], help="synthetic predictive benchmark")
    s = sub.add_parser("orderings", parents=[common], help="ordering study and sparsity")
    s.add_argument("--m-grid", default="10,15,20,30,40")
    s.add_argument("--sparsity-m", type=int, default=15)
    s.add_argument("--conditioning", default="nn", choices=["nn", "corr"])
    s.add_argument("--n-time", type=int, default=20,
                   help="time steps of the study grid (0 keeps [experiment] n_time)")
    s = sub.add_parser("timing", parents=[common], help="likelihood evaluation timing")
    s.add_argument("--m", type=int, default=15)
    s.add_argument("--repeats", type=int, default=5)
    return p


def _overrides(items):
    from .config import ConfigError

    out = {}
    for item in items:
        key, sep, val = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"bad override {item!r}; expected SECTION.KEY=VALUE")
        out[key.strip()] = val.strip()
    return out


def _out_dir(args, cfg) -> Path:
    d = Path(args.out or cfg["data"]["output_dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_data(args, cfg):
    from .config import ConfigError
    from .io import ingest

    lf = args.lf or cfg["data"]["lf_path"]
    hf = args.hf or cfg["data"]["hf_path"]
    if not lf or not hf:
        raise ConfigError("LF and HF CSV paths are required (--lf/--hf or [data])")
    return ingest(lf, hf)


def _read_targets(path):
    import csv

    import numpy as np

    from .io import SchemaError

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["s1", "s2", "t"]:
        raise SchemaError(f"{path}: header must be s1,s2,t")
    try:
        return np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None


def _print_rows(rows, keys):
    from .experiments import fmt

    print(",".join(keys))
    for r in rows:
        print(",".join(fmt(r.get(k)) for k in keys))


def _fit(cfg, data):
    from .experiments import fit_from_config

    return fit_from_config(cfg, data)


def cmd_simulate(args, cfg, out):
    seed = cfg["experiment"]["seed"] if args.seed is None else args.seed
    from ..simulate import generate

    ds = generate(cfg.sim_config(seed=seed))
    paths = ds.write(out)
    for k, v in paths.items():
        print(f"{k}: {v}")
    return EXIT_OK


def cmd_fit(args, cfg, out):
    ds = _load_data(args, cfg)
    data = ds.to_mfdata()
    fr = _fit(cfg, data)
    payload = {"theta": fr.params.to_vector().tolist(), "params": fr.params.as_dict(),
               "nlml": fr.nlml, "converged": fr.converged, "evaluations": fr.evaluations}
    if fr.gls is not None:
        payload["beta_hat"] = fr.gls.beta_hat.tolist()
        payload["beta_se"] = fr.gls.beta_se.tolist()
    (out / "params.json").write_text(json.dumps(payload, indent=2))
    for k, v in fr.params.as_dict().items():
        print(f"{k} = {v:.6g}" if isinstance(v, float) else f"{k} = {v}")
    print(f"nlml = {fr.nlml:.6g}")
    print(f"converged = {str(fr.converged).lower()}")
    if not fr.converged:
        logging.warning("optimiser stopped at the evaluation budget")
    return EXIT_OK


def cmd_predict(args, cfg, out):
    from ..inference import predict
    from .experiments import initial_params, write_rows

    ds = _load_data(args, cfg)
    data = ds.to_mfdata()
    targets = _read_targets(args.targets)
    if args.params:
        theta = json.loads(Path(args.params).read_text())["theta"]
        params = initial_params(cfg, data).from_vector(theta)
    else:
        params = _fit(cfg, data).params
    p = predict(params, data, cfg.model_config(), targets)
    rows = [{"s1": x[0], "s2": x[1], "t": x[2], "mean": m, "sd": s, "lower95": lo, "upper95": hi}
            for x, m, s, lo, hi in zip(targets, p.mean, p.sd, p.lower, p.upper)]
    keys = ["s1", "s2", "t", "mean", "sd", "lower95", "upper95"]
    write_rows(out / "predictions.csv", rows, keys)
    _print_rows(rows, keys)
    return EXIT_OK


def cmd_loso(args, cfg, out):
    import warnings

    from .experiments import emit_plot_data, loso_cv, write_rows

    ds = _load_data(args, cfg)
    write_rows(out / "matching.csv", ds.matching_rows())
    data = ds.to_mfdata()
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        res = loso_cv(data, cfg, args.model)
    keys = ["station_id", "mae", "rmse", "corr", "cov95", "nlml"]
    rows = [{"station_id": ds.station_names[k], **m.as_dict()} for k, m in res.per_station.items()]
    rows += [{"station_id": ds.station_names[k], "error": msg} for k, msg in res.failed.items()]
    if res.aggregate is not None:
        rows.append({"station_id": "mean", **res.aggregate.as_dict()})
    write_rows(out / "report_loso.csv", rows, keys + ["error"])
    emit_plot_data(out, loso=res, station_names=ds.station_names)
    _print_rows(rows, keys)
    if res.aggregate is None:
        return EXIT_NUMERICAL
    return EXIT_PARTIAL if res.partial else EXIT_OK


def cmd_validate(args, cfg, out):
    from .experiments import emit_plot_data, run_table1

    _, summ = run_table1(cfg, out)
    emit_plot_data(out, curves=[{"ordering": cfg["vecchia"]["ordering"], **r} for r in summ])
    _print_rows(summ, list(summ[0].keys()) if summ else [])
    return EXIT_OK


def cmd_benchmark(args, cfg, out):
    from .experiments import run_table2

    _, summ = run_table2(cfg, out)
    _print_rows(summ, list(summ[0].keys()) if summ else [])
    return EXIT_OK


def cmd_orderings(args, cfg, out):
    from .experiments import SPARSITY_FIELDS, emit_plot_data, run_orderings, run_sparsity

    grid = tuple(int(x) for x in args.m_grid.replace(",", " ").split())
    nt = args.n_time or None
    sp = run_sparsity(cfg, out, m=args.sparsity_m, n_time=nt, conditioning=args.conditioning)
    _print_rows(sp, SPARSITY_FIELDS)
    _, summ = run_orderings(cfg, out, m_grid=grid, n_time=nt, conditioning=args.conditioning)
    emit_plot_data(out, curves=[{**r, "conditioning": args.conditioning} for r in summ])
    _print_rows(summ, list(summ[0].keys()) if summ else [])
    return EXIT_OK


def cmd_timing(args, cfg, out):
    from .experiments import TIMING_FIELDS, run_timing

    rows = run_timing(cfg, out, m=args.m, repeats=args.repeats)
    _print_rows(rows, TIMING_FIELDS)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict, "loso": cmd_loso,
    "validate": cmd_validate, "benchmark": cmd_benchmark, "orderings": cmd_orderings,
    "timing": cmd_timing,
}


def main(argv=None) -> int:
    _limit_threads()
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    from ..densegp import DenseSizeExceeded
    from ..inference import RECOVERABLE, OptimizationFailed
    from .config import ConfigError, load_config, write_resolved
    from .io import EmptyFidelity, NonFiniteValue, SchemaError

    try:
        cfg = load_config(args.config, _overrides(args.set))
        out = _out_dir(args, cfg)
        resolved = write_resolved(cfg, out)
        print(f"# resolved config: {resolved}")
        print(resolved.read_text().rstrip())
        return COMMANDS[args.command](args, cfg, out)
    except (ConfigError, SchemaError, EmptyFidelity, NonFiniteValue, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OptimizationFailed, DenseSizeExceeded, *RECOVERABLE) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
