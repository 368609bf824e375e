"""Data containers, hyperparameters and model configuration."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .kernels import KernelParams, as_points
from .meanmodel import GlsKind, GlsMode
from .mfstruct import NoiseModel
from .rho import RhoKind, RhoModel, constant, evaluate
from .vecchia import Conditioning, Ordering, OrderingStrategy

__all__ = ["MfData", "MfHyperParams", "ModelConfig", "N_POSITIVE"]

#: Number of positive (log-transformed) hyperparameters.
N_POSITIVE = 8


@dataclass(frozen=True)
class MfData:
    """Training data for one multi-fidelity fit.

    ``hf_station`` labels HF rows by station; it is only used by the
    empirical coupling model and by cross-validation.
    """

    lf_points: np.ndarray
    y_lf: np.ndarray
    hf_points: np.ndarray
    y_hf: np.ndarray
    hf_station: np.ndarray | None = None

    def __post_init__(self):
        lf = as_points(self.lf_points)
        hf = as_points(self.hf_points) if len(self.hf_points) else np.zeros((0, 3))
        y_lf = np.asarray(self.y_lf, dtype=float).reshape(-1)
        y_hf = np.asarray(self.y_hf, dtype=float).reshape(-1)
        if len(lf) != len(y_lf) or len(hf) != len(y_hf):
            raise ValueError("points and responses have different lengths")
        if not (np.all(np.isfinite(y_lf)) and np.all(np.isfinite(y_hf))):
            raise ValueError("responses contain non-finite values")
        st = self.hf_station
        if st is not None:
            st = np.asarray(st)
            if len(st) != len(hf):
                raise ValueError("hf_station length does not match HF rows")
        object.__setattr__(self, "lf_points", lf)
        object.__setattr__(self, "hf_points", hf)
        object.__setattr__(self, "y_lf", y_lf)
        object.__setattr__(self, "y_hf", y_hf)
        object.__setattr__(self, "hf_station", st)

    @property
    def n_lf(self) -> int:
        return len(self.y_lf)

    @property
    def n_hf(self) -> int:
        return len(self.y_hf)

    @property
    def n(self) -> int:
        return self.n_lf + self.n_hf

    @property
    def y(self) -> np.ndarray:
        return np.concatenate([self.y_lf, self.y_hf])

    def without_stations(self, stations) -> "MfData":
        keep = ~np.isin(self.hf_station, np.atleast_1d(stations))
        return replace(self, hf_points=self.hf_points[keep], y_hf=self.y_hf[keep],
                       hf_station=self.hf_station[keep])

    @classmethod
    def from_tables(cls, lf, hf) -> "MfData":
        """From arrays ``lf = [s1, s2, t, y_L]`` and ``hf = [id, s1, s2, t, y_H]``."""
        lf = np.asarray(lf, dtype=float)
        hf = np.asarray(hf, dtype=float).reshape(-1, 5)
        return cls(lf[:, :3], lf[:, 3], hf[:, 1:4], hf[:, 4], hf[:, 0].astype(np.int64))


@dataclass(frozen=True)
class MfHyperParams:
    kernel_lf: KernelParams
    kernel_delta: KernelParams
    noise: NoiseModel
    rho: RhoModel = field(default_factory=lambda: constant(0.5))

    def rho_at(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(pts) == 0:
            return np.zeros(0)
        return evaluate(self.rho, pts[:, :2])

    def to_vector(self) -> np.ndarray:
        """Unconstrained vector: logs of the 8 positive values, then rho coefficients.

        Order: ``g_L^2, g_delta^2, sigma_L, l_s^L, l_t^L, sigma_d, l_s^d, l_t^d``.
        """
        kl, kd, nz = self.kernel_lf, self.kernel_delta, self.noise
        pos = [nz.var_lf, nz.var_hf, kl.sigma, kl.length_space, kl.length_time,
               kd.sigma, kd.length_space, kd.length_time]
        return np.r_[np.log(pos), np.asarray(self.rho.coef, dtype=float)]

    def from_vector(self, theta) -> "MfHyperParams":
        theta = np.asarray(theta, dtype=float)
        p = np.exp(theta[:N_POSITIVE])
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise ValueError("transformed parameters out of range")
        rho = self.rho
        if rho.kind is not RhoKind.EMPIRICAL:
            rho = rho.with_coef(theta[N_POSITIVE:])
        return MfHyperParams(
            KernelParams(p[2], p[3], p[4]),
            KernelParams(p[5], p[6], p[7]),
            NoiseModel(p[0], p[1]),
            rho,
        )

    def as_dict(self) -> dict:
        kl, kd, nz = self.kernel_lf, self.kernel_delta, self.noise
        out = {
            "g2_lf": nz.var_lf, "g2_hf": nz.var_hf,
            "sigma_lf": kl.sigma, "ls_lf": kl.length_space, "lt_lf": kl.length_time,
            "sigma_delta": kd.sigma, "ls_delta": kd.length_space, "lt_delta": kd.length_time,
            "rho_kind": self.rho.kind.value,
        }
        for i, c in enumerate(self.rho.coef):
            out[f"rho_{i}"] = c
        return out


@dataclass(frozen=True)
class ModelConfig:
    """How the likelihood is evaluated.

    ``exact=True`` uses dense linear algebra on the full covariance (the
    reference model); otherwise the Vecchia/Woodbury path is used.
    """

    m: int = 40
    ordering: OrderingStrategy = OrderingStrategy(Ordering.SPACE_MAJOR, 0)
    conditioning: Conditioning = Conditioning.CORRELATION
    gls: GlsMode = GlsMode(GlsKind.GLOBAL, reml=True)
    freeze_neighbors: bool = False
    latent: str = "grid"
    exact: bool = False

    def __post_init__(self):
        if int(self.m) < 1:
            raise ValueError("m must be at least 1")
        object.__setattr__(self, "conditioning", Conditioning(self.conditioning))
        if not isinstance(self.gls, GlsMode):
            object.__setattr__(self, "gls", GlsMode(self.gls))
        if not isinstance(self.ordering, OrderingStrategy):
            object.__setattr__(self, "ordering", OrderingStrategy(Ordering(self.ordering), 0))
