"""Keyed text configuration (INI syntax) for runs and experiments.

Every key has a type and a default; unknown sections or keys are rejected so
that typos fail loudly.  :func:`write_resolved` writes the full resolved
configuration next to the outputs of a run.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from ..meanmodel import GlsMode
from ..model import ModelConfig
from ..vecchia import Conditioning, Ordering, OrderingStrategy

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "write_resolved", "SCHEMA"]


class ConfigError(ValueError):
    pass


def _bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _ints(v: str) -> tuple:
    return tuple(int(x) for x in str(v).replace(",", " ").split())


def _strs(v: str) -> tuple:
    return tuple(x for x in str(v).replace(",", " ").split())


def _opt_float(v: str):
    return None if str(v).strip().lower() in ("", "none") else float(v)


def _opt_int(v: str):
    return None if str(v).strip().lower() in ("", "none") else int(v)


def _opt_str(v: str):
    return None if str(v).strip() == "" else str(v).strip()


# section -> key -> (parser, default)
SCHEMA = {
    "data": {
        "lf_path": (_opt_str, None),
        "hf_path": (_opt_str, None),
        "output_dir": (str, "results"),
    },
    "kernel": {
        "sigma_lf": (_opt_float, None), "ls_lf": (_opt_float, None), "lt_lf": (_opt_float, None),
        "sigma_delta": (_opt_float, None), "ls_delta": (_opt_float, None),
        "lt_delta": (_opt_float, None),
        "g2_lf": (_opt_float, None), "g2_hf": (_opt_float, None),
    },
    "vecchia": {
        "m": (int, 40),
        "ordering": (str, "space-major"),
        "ordering_seed": (int, 0),
        "conditioning": (str, "corr"),
        "freeze_neighbors": (_bool, False),
        "latent": (str, "grid"),
        "exact": (_bool, False),
    },
    "rho": {"kind": (str, "constant"), "init": (_opt_float, None)},
    "gls": {"mode": (str, "global"), "reml": (_bool, True)},
    "optimizer": {
        "restarts": (int, 3), "maxfev": (int, 500), "fatol": (float, 1e-6), "seed": (int, 0),
    },
    "experiment": {
        "replications": (int, 30),
        "seed": (int, 0),
        "m_grid": (_ints, (10, 20, 30, 40, 60)),
        "orderings": (_strs, ("time-major", "space-major", "random", "time-major-randspace")),
        "conditionings": (_strs, ("nn", "corr")),
        "n_space": (int, 6),
        "n_time": (int, 10),
        "rho_true": (float, 0.6),
        "target_corr_space": (float, 0.72),
        "target_corr_space_delta": (_opt_float, None),
        "target_corr_time": (float, 0.8),
        "sigma2_lf": (float, 1.0),
        "sigma2_delta": (float, 2.0),
        "noise_lf": (float, 0.1),
        "noise_delta": (float, 0.1),
        "jitter": (float, 1e-8),
        "train_fraction": (float, 0.3),
        "n_train_stations": (_opt_int, 12),
        "baselines": (_strs, ("gp-l", "gp-3d", "gp-4d")),
        "classic": (_bool, True),
        "dense_cap": (int, 5000),
    },
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: {
        s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def set(self, section: str, key: str, raw) -> None:
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key '{key}' in [{section}]")
        parser = SCHEMA[section][key][0]
        try:
            self.values[section][key] = parser(raw) if isinstance(raw, str) else raw
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None

    def model_config(self) -> ModelConfig:
        v = self["vecchia"]
        g = self["gls"]
        try:
            return ModelConfig(
                m=v["m"],
                ordering=OrderingStrategy(Ordering(v["ordering"]), v["ordering_seed"]),
                conditioning=Conditioning(v["conditioning"]),
                gls=GlsMode(g["mode"], reml=g["reml"]),
                freeze_neighbors=v["freeze_neighbors"],
                latent=v["latent"],
                exact=v["exact"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def optimizer_kwargs(self) -> dict:
        o = self["optimizer"]
        return {"restarts": o["restarts"], "maxfev": o["maxfev"], "fatol": o["fatol"],
                "seed": o["seed"]}

    def sim_config(self, seed: int | None = None):
        from ..simulate import SimConfig

        e = self["experiment"]
        try:
            return SimConfig(
                n_space=e["n_space"], n_time=e["n_time"], rho_true=e["rho_true"],
                target_corr_spaceL=e["target_corr_space"],
                target_corr_spaceD=e["target_corr_space_delta"],
                target_corr_time=e["target_corr_time"],
                sigma2_L=e["sigma2_lf"], sigma2_delta=e["sigma2_delta"],
                noise_L=e["noise_lf"], noise_delta=e["noise_delta"], jitter=e["jitter"],
                train_fraction=e["train_fraction"], n_train_stations=e["n_train_stations"],
                seed=e["seed"] if seed is None else seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read an INI file (optional) and apply ``{"section.key": value}`` overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for section in cp.sections():
            for key, raw in cp.items(section):
                cfg.set(section, key, raw)
    for dotted, raw in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        cfg.set(section, key, raw)
    return cfg


def _render(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def write_resolved(cfg: ExperimentConfig, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cp = configparser.ConfigParser(interpolation=None)
    for section, keys in cfg.values.items():
        cp[section] = {k: _render(v) for k, v in keys.items()}
    path = d / "resolved_config.ini"
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)
    return path
