"""GLS mean removal with fidelity-specific offsets.

Two designs are supported.  ``global`` fits one intercept per fidelity;
``adaptive`` fits a planar spatial trend ``b0 + b1*s1 + b2*s2`` per fidelity,
with coordinates centred on the training mean of each fidelity so that the
intercepts stay well conditioned.  The coefficients are estimated under the
full joint covariance ``K`` using the Woodbury solves of :class:`MfSystem`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "GlsFit",
    "GlsKind",
    "GlsMode",
    "SingularGramian",
    "build_design",
    "design_rows",
    "gaussian_nlml",
    "gls_fit",
    "reml_correction",
]

#: Largest acceptable condition number of ``G^T K^{-1} G``.
MAX_CONDITION = 1e12


class SingularGramian(np.linalg.LinAlgError):
    """``G^T K^{-1} G`` is numerically singular (collinear design)."""


class GlsKind(str, Enum):
    NONE = "none"
    GLOBAL = "global"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class GlsMode:
    """Mean model selection.

    ``reml`` adds ``0.5 log|G^T K^{-1} G|`` to the objective and uses
    ``n - P`` in the normalising constant.
    """

    kind: GlsKind = GlsKind.GLOBAL
    reml: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", GlsKind(self.kind))

    @property
    def enabled(self) -> bool:
        return self.kind is not GlsKind.NONE


@dataclass(frozen=True)
class Design:
    """Design matrix plus the centring used for the adaptive trend."""

    G: np.ndarray
    kind: GlsKind
    centers: tuple = ()
    n_lf: int = 0
    n_hf: int = 0

    @property
    def P(self) -> int:
        return self.G.shape[1]


def build_design(lf_points, hf_points, mode: GlsMode, center: bool = True) -> Design:
    """Design matrix stacked as ``[LF rows; HF rows]``.

    With no HF rows the HF block is dropped and a single-fidelity design is
    returned.
    """
    mode = mode if isinstance(mode, GlsMode) else GlsMode(mode)
    if not mode.enabled:
        raise ValueError("build_design needs a GLS mode other than 'none'")
    lf = np.asarray(lf_points, dtype=float).reshape(-1, 3)
    hf = np.asarray(hf_points, dtype=float).reshape(-1, 3)
    blocks = [lf] + ([hf] if len(hf) else [])
    if mode.kind is GlsKind.GLOBAL:
        cols = [np.ones((len(b), 1)) for b in blocks]
        centers = tuple(np.zeros(2) for _ in blocks)
    else:
        centers = tuple(b[:, :2].mean(axis=0) if center else np.zeros(2) for b in blocks)
        cols = [np.column_stack([np.ones(len(b)), b[:, :2] - c]) for b, c in zip(blocks, centers)]
    n = sum(len(b) for b in blocks)
    p = sum(c.shape[1] for c in cols)
    G = np.zeros((n, p))
    r = c0 = 0
    for blk in cols:
        G[r:r + blk.shape[0], c0:c0 + blk.shape[1]] = blk
        r += blk.shape[0]
        c0 += blk.shape[1]
    return Design(G, mode.kind, centers, len(lf), len(hf))


def design_rows(design: Design, points, fidelity: str = "hf") -> np.ndarray:
    """Design rows for new points of one fidelity, same convention as fitting."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    block = 0 if fidelity == "lf" else 1
    if block >= len(design.centers):
        raise ValueError("design has no block for that fidelity")
    width = 1 if design.kind is GlsKind.GLOBAL else 3
    out = np.zeros((len(pts), design.P))
    local = np.ones((len(pts), 1))
    if design.kind is GlsKind.ADAPTIVE:
        local = np.column_stack([local, pts[:, :2] - design.centers[block]])
    out[:, block * width:(block + 1) * width] = local
    return out


@dataclass
class GlsFit:
    beta_hat: np.ndarray
    residual: np.ndarray
    beta_cov: np.ndarray
    design: Design
    gramian: np.ndarray = field(repr=False)
    kinv_residual: np.ndarray | None = field(default=None, repr=False)

    @property
    def P(self) -> int:
        return self.design.P

    @property
    def beta_se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.beta_cov))


def gls_fit(system, y, design: Design) -> GlsFit:
    """Generalised least squares under ``K``; one solve with ``P + 1`` columns.

    ``system`` is anything with a ``solve_K`` method (sparse or dense).
    """
    y = np.asarray(y, dtype=float)
    G = design.G
    if G.shape[0] != len(y):
        raise ValueError("design and response lengths differ")
    KinvYG = system.solve_K(np.column_stack([y, G]))
    Kinv_y, Kinv_G = KinvYG[:, 0], KinvYG[:, 1:]
    M = G.T @ Kinv_G
    M = 0.5 * (M + M.T)
    if not np.all(np.isfinite(M)) or np.linalg.cond(M) > MAX_CONDITION:
        raise SingularGramian("G^T K^-1 G is numerically singular")
    try:
        c = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise SingularGramian(str(exc)) from None
    rhs = G.T @ Kinv_y
    beta = np.linalg.solve(c.T, np.linalg.solve(c, rhs))
    cinv = np.linalg.solve(c, np.eye(len(M)))
    resid = y - G @ beta
    return GlsFit(
        beta_hat=beta,
        residual=resid,
        beta_cov=cinv.T @ cinv,
        design=design,
        gramian=M,
        kinv_residual=Kinv_y - Kinv_G @ beta,
    )


def reml_correction(fit: GlsFit) -> float:
    """``0.5 * log|G^T K^{-1} G|`` for a completed fit."""
    sign, ld = np.linalg.slogdet(fit.gramian)
    if sign <= 0:
        raise SingularGramian("G^T K^-1 G is not positive definite")
    return 0.5 * ld


_LOG2PI = float(np.log(2.0 * np.pi))


def gaussian_nlml(system, y, mode: GlsMode, design: Design | None = None):
    """Negative log marginal likelihood given a factored covariance.

    ``system`` provides ``solve_K`` and ``logdet_K``.  With GLS off the
    zero-mean objective ``0.5 y'K^-1 y + 0.5 log|K| + n/2 log 2pi`` is
    returned.  With GLS on, ``y`` is replaced by the GLS residual and, when
    ``mode.reml`` is set, ``0.5 log|G'K^-1 G|`` is added and the constant
    uses ``n - P``.

    Returns ``(value, GlsFit or None)``.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    logdet = system.logdet_K()
    if not mode.enabled:
        alpha = system.solve_K(y)
        return 0.5 * y @ alpha + 0.5 * logdet + 0.5 * n * _LOG2PI, None
    if design is None:
        raise ValueError("a design matrix is required when GLS is enabled")
    fit = gls_fit(system, y, design)
    r = fit.residual
    val = 0.5 * r @ fit.kinv_residual + 0.5 * logdet
    if mode.reml:
        val += reml_correction(fit) + 0.5 * (n - fit.P) * _LOG2PI
    else:
        val += 0.5 * n * _LOG2PI
    return float(val), fit
