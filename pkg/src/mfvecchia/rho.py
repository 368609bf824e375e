"""Cross-fidelity coupling ``rho(s)``.

Four forms are provided: a constant, a linear or quadratic polynomial in the
spatial coordinates, and an empirical field obtained by smoothing per-station
regression slopes of HF on LF with a small GP.  The polynomial coefficients
are trainable; the empirical field is fixed once fitted.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .densegp import DenseGP, fit_dense_gp

__all__ = [
    "DegenerateVariance",
    "RhoKind",
    "RhoModel",
    "UnfittedEmpiricalModel",
    "constant",
    "empirical_slopes",
    "evaluate",
    "fit_empirical_gp",
    "linear",
    "paired_series",
    "quadratic",
]

#: |rho| above this at any evaluated location triggers a warning.
RHO_WARN = 10.0
MIN_COMMON_TIMES = 3


class UnfittedEmpiricalModel(RuntimeError):
    pass


class DegenerateVariance(ValueError):
    def __init__(self, station):
        super().__init__(f"LF series at station {station!r} has (near) zero variance")
        self.station = station


class RhoKind(str, Enum):
    CONSTANT = "constant"
    LINEAR = "linear"
    QUADRATIC = "quadratic"
    EMPIRICAL = "egp"


_NCOEF = {RhoKind.CONSTANT: 1, RhoKind.LINEAR: 3, RhoKind.QUADRATIC: 5, RhoKind.EMPIRICAL: 0}


@dataclass(frozen=True)
class RhoModel:
    """Coupling definition.

    ``coef`` holds ``[rho]`` (constant), ``[a, b1, b2]`` (linear) or
    ``[a, b1, b2, b11, b22]`` (quadratic).  ``smoother`` is the fitted GP of
    the empirical model.
    """

    kind: RhoKind
    coef: tuple = ()
    smoother: DenseGP | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RhoKind(self.kind))
        coef = tuple(float(c) for c in self.coef)
        if len(coef) != _NCOEF[self.kind]:
            raise ValueError(f"{self.kind.value} rho needs {_NCOEF[self.kind]} coefficients")
        if not all(np.isfinite(coef)):
            raise ValueError("rho coefficients must be finite")
        object.__setattr__(self, "coef", coef)

    @property
    def n_trainable(self) -> int:
        return len(self.coef)

    def with_coef(self, coef) -> "RhoModel":
        return replace(self, coef=tuple(coef))

    def __call__(self, locations) -> np.ndarray:
        return evaluate(self, locations)


def constant(rho: float) -> RhoModel:
    return RhoModel(RhoKind.CONSTANT, (rho,))


def linear(a: float, b1: float, b2: float) -> RhoModel:
    return RhoModel(RhoKind.LINEAR, (a, b1, b2))


def quadratic(a: float, b1: float, b2: float, b11: float = 0.0, b22: float = 0.0) -> RhoModel:
    return RhoModel(RhoKind.QUADRATIC, (a, b1, b2, b11, b22))


def evaluate(model: RhoModel, locations) -> np.ndarray:
    """``rho`` at each location; ``locations`` has 2 (or 3) columns."""
    loc = np.asarray(locations, dtype=float)
    loc = loc.reshape(-1, loc.shape[-1]) if loc.ndim else loc.reshape(1, 1)
    s1, s2 = loc[:, 0], loc[:, 1]
    c = model.coef
    if model.kind is RhoKind.CONSTANT:
        out = np.full(len(loc), c[0])
    elif model.kind is RhoKind.LINEAR:
        out = c[0] + c[1] * s1 + c[2] * s2
    elif model.kind is RhoKind.QUADRATIC:
        out = c[0] + c[1] * s1 + c[2] * s2 + c[3] * s1**2 + c[4] * s2**2
    else:
        if model.smoother is None:
            raise UnfittedEmpiricalModel("empirical rho model has not been fitted")
        out = model.smoother.predict(loc[:, :2], return_var=False)
    if out.size and np.max(np.abs(out)) > RHO_WARN:
        warnings.warn(f"|rho| reaches {np.max(np.abs(out)):.3g} at some locations",
                      RuntimeWarning, stacklevel=2)
    return out


def paired_series(lf_points, y_lf, hf_points, y_hf, station_ids, lf_site=None):
    """Pair each HF station's series with the LF values at the same times.

    ``lf_site`` optionally maps station id to the LF ``(s1, s2)`` it is
    matched to; by default the station's own coordinates are used.

    Returns ``{station: (coords, y_L, y_H)}`` restricted to common times.
    """
    lf_points = np.asarray(lf_points, dtype=float)
    y_lf = np.asarray(y_lf, dtype=float)
    hf_points = np.asarray(hf_points, dtype=float)
    y_hf = np.asarray(y_hf, dtype=float)
    lookup = {tuple(p): v for p, v in zip(lf_points.tolist(), y_lf.tolist())}
    station_ids = np.asarray(station_ids)
    out = {}
    for sid in dict.fromkeys(station_ids.tolist()):
        rows = np.nonzero(station_ids == sid)[0]
        coords = hf_points[rows[0], :2]
        site = tuple(lf_site[sid]) if lf_site is not None else tuple(coords)
        yl, yh = [], []
        for r in rows:
            key = (site[0], site[1], hf_points[r, 2])
            if key in lookup:
                yl.append(lookup[key])
                yh.append(y_hf[r])
        out[sid] = (coords, np.asarray(yl), np.asarray(yh))
    return out


def empirical_slopes(pairs) -> tuple[np.ndarray, np.ndarray, list]:
    """Per-station ``cov(y_H, y_L) / var(y_L)`` with the ``n - 1`` convention.

    ``pairs`` maps station id to ``(coords, y_L, y_H)`` (see
    :func:`paired_series`).  Returns ``(slopes, coords, station_ids)``.
    """
    slopes, coords, ids = [], [], []
    for sid, (xy, yl, yh) in pairs.items():
        yl = np.asarray(yl, dtype=float)
        yh = np.asarray(yh, dtype=float)
        if len(yl) < MIN_COMMON_TIMES:
            raise ValueError(f"station {sid!r} has fewer than {MIN_COMMON_TIMES} common times")
        v = np.var(yl, ddof=1)
        if v < 1e-12:
            raise DegenerateVariance(sid)
        c = np.sum((yl - yl.mean()) * (yh - yh.mean())) / (len(yl) - 1)
        slopes.append(c / v)
        coords.append(np.asarray(xy, dtype=float)[:2])
        ids.append(sid)
    return np.asarray(slopes), np.asarray(coords).reshape(-1, 2), ids


def fit_empirical_gp(slopes, coords, smoother_params: dict | None = None,
                     seed: int = 0) -> RhoModel:
    """Smooth station slopes with a GP (RBF + noise) over ``(s1, s2)``.

    Hyperparameters are fitted by marginal likelihood unless
    ``smoother_params`` (``amp``, ``lengths``, ``noise``) is given.  The noise
    variance is floored at ``1e-6 * var(slopes)``.
    """
    slopes = np.asarray(slopes, dtype=float).reshape(-1)
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    if len(slopes) < 2:
        raise ValueError("at least two stations with valid slopes are required")
    gp = fit_dense_gp(coords, slopes, fixed=smoother_params, seed=seed,
                      noise_floor=max(1e-6 * np.var(slopes), 1e-12))
    return RhoModel(RhoKind.EMPIRICAL, (), gp)
