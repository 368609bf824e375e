"""Synthetic multi-fidelity space-time data on a regular station grid.

Stations sit on an ``n_space x n_space`` unit grid, times are equispaced on
``[0, 1]``.  Each latent field is drawn from a separable RBF covariance
``K_s (x) K_t`` (stacked time-fastest within station) plus a jitter ``eta``.
Note that both the spatial and the temporal factor carry the signal variance,
so the zero-lag covariance of a component is ``sigma2**2``.

    y_L = d_L + e_L,   y_H = rho * y_L + d_delta + e_delta

Random streams are split from one ``SeedSequence`` (Philox bit generator),
one stream per sampled quantity, so that changing e.g. the noise level does
not change the latent draws.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .kernels import KernelParams
from .mfstruct import NoiseModel

__all__ = [
    "SimConfig",
    "SimDataset",
    "generate",
    "lengthscale_from_corr",
    "split_stations",
    "true_model_params",
    "TABLE2_CONFIG",
]

_STREAMS = ("latent_lf", "noise_lf", "latent_delta", "noise_delta", "split")


def lengthscale_from_corr(c: float, d: float) -> float:
    """Length scale giving RBF correlation ``c`` at distance ``d``."""
    if not (0.0 < c < 1.0):
        raise ValueError(f"target correlation must lie in (0, 1), got {c!r}")
    if not d > 0:
        raise ValueError(f"distance must be positive, got {d!r}")
    return d / math.sqrt(-2.0 * math.log(c))


@dataclass(frozen=True)
class SimConfig:
    n_space: int = 6
    n_time: int = 10
    rho_true: float = 0.6
    target_corr_spaceL: float = 0.72
    target_corr_spaceD: float | None = None
    target_corr_time: float = 0.8
    sigma2_L: float = 1.0
    sigma2_delta: float = 2.0
    noise_L: float = 0.1
    noise_delta: float = 0.1
    jitter: float = 1e-8
    train_fraction: float = 0.3
    n_train_stations: int | None = None
    spacing: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_space < 2 or self.n_time < 2:
            raise ValueError("need at least a 2x2 grid and 2 time steps")
        for name in ("target_corr_spaceL", "target_corr_time"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.target_corr_spaceD is not None and not 0 < self.target_corr_spaceD < 1:
            raise ValueError("target_corr_spaceD must lie in (0, 1)")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if min(self.sigma2_L, self.sigma2_delta) < 0 or min(self.noise_L, self.noise_delta) < 0:
            raise ValueError("variances must be non-negative")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")

    @property
    def corr_space_delta(self) -> float:
        return self.target_corr_spaceL if self.target_corr_spaceD is None else self.target_corr_spaceD

    @property
    def n_stations(self) -> int:
        return self.n_space**2

    @property
    def dt(self) -> float:
        return 1.0 / (self.n_time - 1)

    def lengthscales(self) -> dict:
        lt = lengthscale_from_corr(self.target_corr_time, self.dt)
        return {
            "L": (lengthscale_from_corr(self.target_corr_spaceL, self.spacing), lt),
            "delta": (lengthscale_from_corr(self.corr_space_delta, self.spacing), lt),
        }

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, seed=int(seed))


#: Synthetic benchmark configuration (6x6 grid, 10 steps, 12 training stations).
TABLE2_CONFIG = SimConfig(n_train_stations=12)


@dataclass
class SimDataset:
    config: SimConfig
    stations: np.ndarray          # (N_s, 2)
    times: np.ndarray             # (N_t,)
    lf: np.ndarray                # (N, 4): s1, s2, t, y_L
    hf: np.ndarray                # (N, 5): station_id, s1, s2, t, y_H
    train_ids: np.ndarray
    test_ids: np.ndarray
    truth: dict = field(default_factory=dict)

    @property
    def hf_train(self) -> np.ndarray:
        return self.hf[np.isin(self.hf[:, 0], self.train_ids)]

    @property
    def hf_test(self) -> np.ndarray:
        return self.hf[np.isin(self.hf[:, 0], self.test_ids)]

    def write(self, directory) -> dict:
        """Write ``lf.csv``, ``hf_train.csv``, ``hf_test.csv`` and ``metadata.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {}
        paths["lf"] = _write_csv(d / "lf.csv", ["s1", "s2", "t", "y_L"], self.lf)
        hdr = ["station_id", "s1", "s2", "t", "y_H"]
        paths["hf_train"] = _write_csv(d / "hf_train.csv", hdr, self.hf_train, int_first=True)
        paths["hf_test"] = _write_csv(d / "hf_test.csv", hdr, self.hf_test, int_first=True)
        meta = {"config": asdict(self.config),
                "resolved": {"corr_space_delta": self.config.corr_space_delta,
                             "lengthscales": self.config.lengthscales()},
                "train_ids": self.train_ids.tolist(), "test_ids": self.test_ids.tolist()}
        (d / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        paths["metadata"] = d / "metadata.json"
        return paths


def _write_csv(path, header, rows, int_first=False):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            vals = [repr(float(v)) for v in r]
            if int_first:
                vals[0] = str(int(r[0]))
            w.writerow(vals)
    return path


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_stations(stations, fraction: float, seed, n_train: int | None = None):
    """Random station split; train size ``round_half_up(fraction * N)``.

    The size is clipped to ``[1, N - 1]``.  ``seed`` may be an int or a
    ``numpy.random.Generator``.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    ids = np.asarray(stations)
    n = len(ids)
    if n < 2:
        raise ValueError("need at least two stations to split")
    k = _round_half_up(fraction * n) if n_train is None else int(n_train)
    k = min(max(k, 1), n - 1)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pick = rng.permutation(n)[:k]
    mask = np.zeros(n, dtype=bool)
    mask[pick] = True
    return ids[mask], ids[~mask]


def _rbf_1d(x, length, amp):
    d = x[:, None] - x[None, :]
    return amp * np.exp(-0.5 * d * d / length**2)


def _spatial_gram(S, length, amp):
    d = S[:, None, :] - S[None, :, :]
    return amp * np.exp(-0.5 * np.einsum("ijk,ijk->ij", d, d) / length**2)


def separable_cov(Ks: np.ndarray, Kt: np.ndarray) -> np.ndarray:
    """Full covariance, time fastest within station (Hadamard of Kroneckers)."""
    ns, nt = len(Ks), len(Kt)
    return np.kron(Ks, np.ones((nt, nt))) * np.kron(np.ones((ns, ns)), Kt)


def _sample_separable(Ks, Kt, eta, rng):
    ls, Qs = np.linalg.eigh(Ks)
    lt, Qt = np.linalg.eigh(Kt)
    lam = np.outer(np.clip(ls, 0, None), np.clip(lt, 0, None)) + eta
    Z = rng.standard_normal(lam.shape)
    return (Qs @ (np.sqrt(lam) * Z) @ Qt.T).reshape(-1)


def generate(cfg: SimConfig) -> SimDataset:
    g = np.arange(cfg.n_space, dtype=float) * cfg.spacing
    S = np.array([(a, b) for a in g for b in g])
    T = np.linspace(0.0, 1.0, cfg.n_time)
    ns, nt = len(S), len(T)
    ss = np.random.SeedSequence(cfg.seed)
    gens = {k: np.random.Generator(np.random.Philox(c)) for k, c in zip(_STREAMS, ss.spawn(len(_STREAMS)))}
    ell = cfg.lengthscales()
    fields = {}
    for comp, var, key in (("L", cfg.sigma2_L, "latent_lf"), ("delta", cfg.sigma2_delta, "latent_delta")):
        ls, lt = ell[comp]
        Ks = _spatial_gram(S, ls, var)
        Kt = _rbf_1d(T, lt, var)
        fields[comp] = _sample_separable(Ks, Kt, cfg.jitter, gens[key])
    n = ns * nt
    e_L = np.sqrt(cfg.noise_L) * gens["noise_lf"].standard_normal(n)
    e_d = np.sqrt(cfg.noise_delta) * gens["noise_delta"].standard_normal(n)
    y_L = fields["L"] + e_L
    delta = fields["delta"] + e_d
    y_H = cfg.rho_true * y_L + delta
    coords = np.column_stack([np.repeat(S, nt, axis=0), np.tile(T, ns)])
    sid = np.repeat(np.arange(ns), nt).astype(float)
    train, test = split_stations(np.arange(ns), cfg.train_fraction, gens["split"], cfg.n_train_stations)
    return SimDataset(
        config=cfg,
        stations=S,
        times=T,
        lf=np.column_stack([coords, y_L]),
        hf=np.column_stack([sid, coords, y_H]),
        train_ids=np.sort(train),
        test_ids=np.sort(test),
        truth={"d_L": fields["L"], "e_L": e_L, "d_delta": fields["delta"],
               "delta": delta, "f_H": y_H},
    )


def true_model_params(cfg: SimConfig):
    """Generating parameters expressed in the model's parameterisation.

    Returns ``(kernel_L, kernel_delta, noise, rho)``.  The LF noise enters the
    HF rows through ``rho * e_L``, which the model absorbs in the HF nugget.
    """
    ell = cfg.lengthscales()
    kl = KernelParams(cfg.sigma2_L**2 + cfg.jitter, *ell["L"])
    kd = KernelParams(cfg.sigma2_delta**2 + cfg.jitter, *ell["delta"])
    noise = NoiseModel(max(cfg.noise_L, 1e-8), max(cfg.noise_delta + cfg.rho_true**2 * cfg.noise_L, 1e-8))
    return kl, kd, noise, cfg.rho_true
