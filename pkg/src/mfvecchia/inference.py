"""Likelihood evaluation, hyperparameter fitting and prediction.

:class:`MfProblem` caches everything that does not depend on the
hyperparameters (latent layout, orderings, GLS design, parameter-free
neighbor sets) so that repeated likelihood evaluations only rebuild the
Vecchia factors and the sparse system.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ._sparse import CholeskyFailure
from .densegp import DENSE_CAP, fit_dense_gp
from .kernels import KernelParams
from .meanmodel import GlsFit, SingularGramian, build_design, design_rows, gaussian_nlml
from .mfstruct import MfSystem, NoiseModel, build_layout
from .model import N_POSITIVE, MfData, MfHyperParams, ModelConfig
from .oracle import DenseSystem, dense_K, latent_cross
from .rho import RhoKind, RhoModel, constant
from .vecchia import (
    Conditioning,
    ConditioningRule,
    NonPositiveConditionalVariance,
    build_factor,
    conditioning_coordinates,
    neighbor_sets,
    order_points,
)

__all__ = [
    "BaselineKind",
    "FitResult",
    "MfProblem",
    "OptimizationFailed",
    "Prediction",
    "baseline_fit_predict",
    "default_init",
    "fit",
    "nlml",
    "predict",
]

log = logging.getLogger(__name__)

#: Numerical failures turned into a +inf objective during optimisation.
RECOVERABLE = (CholeskyFailure, NonPositiveConditionalVariance, SingularGramian,
               np.linalg.LinAlgError, FloatingPointError)


#: Initial simplex edge on the transformed scale.
SIMPLEX_STEP = 0.5


class OptimizationFailed(RuntimeError):
    pass


class MfProblem:
    """A data set bound to a model configuration."""

    def __init__(self, data: MfData, config: ModelConfig):
        self.data = data
        self.config = config
        self.layout = build_layout(data.lf_points, data.hf_points, config.latent)
        lay = self.layout
        self.perm_lf = order_points(lay.latent_points, config.ordering)
        self.pts_lf = lay.latent_points[self.perm_lf]
        if lay.n_hf:
            self.perm_hf = order_points(lay.hf_points, config.ordering)
            self.pts_hf = lay.hf_points[self.perm_hf]
        else:
            self.perm_hf = self.pts_hf = None
        self.design = (build_design(data.lf_points, data.hf_points, config.gls)
                       if config.gls.enabled else None)
        self._neighbors = None
        self.n_evals = 0

    def _rules(self):
        m_l = min(self.config.m, max(len(self.pts_lf) - 1, 1))
        m_h = min(self.config.m, max(len(self.pts_hf) - 1, 1)) if self.pts_hf is not None else 1
        kind = self.config.conditioning
        return ConditioningRule(kind, m_l), ConditioningRule(kind, m_h)

    def neighbors(self, params: MfHyperParams):
        """Conditioning sets for both latent processes."""
        static = (self.config.conditioning is Conditioning.NEAREST_NEIGHBOR
                  or self.config.freeze_neighbors)
        if static and self._neighbors is not None:
            return self._neighbors
        rl, rh = self._rules()
        nb_l = neighbor_sets(conditioning_coordinates(self.pts_lf, rl, params.kernel_lf), rl.m)
        nb_h = None
        if self.pts_hf is not None:
            nb_h = neighbor_sets(conditioning_coordinates(self.pts_hf, rh, params.kernel_delta), rh.m)
        if static:
            self._neighbors = (nb_l, nb_h)
        return nb_l, nb_h

    def system(self, params: MfHyperParams):
        """Factored covariance: :class:`MfSystem`, or a dense one when exact."""
        if self.config.exact:
            return DenseSystem(dense_K(self.data, params))
        rl, rh = self._rules()
        nb_l, nb_h = self.neighbors(params)
        f_l = build_factor(self.pts_lf, rl, params.kernel_lf, neighbors=nb_l)
        f_l.perm = self.perm_lf
        f_h = None
        if self.pts_hf is not None:
            f_h = build_factor(self.pts_hf, rh, params.kernel_delta, neighbors=nb_h)
            f_h.perm = self.perm_hf
        rho_hf = params.rho_at(self.data.hf_points)
        return MfSystem(self.layout, f_l, f_h, rho_hf, params.noise)

    def nlml(self, params: MfHyperParams):
        """``(value, system, GlsFit or None)``; numerical failures raise."""
        self.n_evals += 1
        sysm = self.system(params)
        val, gfit = gaussian_nlml(sysm, self.data.y, self.config.gls, self.design)
        return float(val), sysm, gfit

    def objective(self, params: MfHyperParams) -> float:
        try:
            with np.errstate(over="raise", invalid="raise", divide="raise"):
                val = self.nlml(params)[0]
        except RECOVERABLE:
            return np.inf
        return val if np.isfinite(val) else np.inf


def nlml(params: MfHyperParams, data: MfData, config: ModelConfig) -> float:
    """Negative log marginal likelihood; ``+inf`` on numerical breakdown."""
    return MfProblem(data, config).objective(params)


@dataclass
class FitResult:
    params: MfHyperParams
    nlml: float
    gls: GlsFit | None
    iterations: int
    evaluations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)


def default_init(data: MfData, rho: RhoModel | None = None) -> MfHyperParams:
    """Data-driven starting values."""
    yl, yh = data.y_lf, data.y_hf
    vl = max(float(np.var(yl)), 1e-6)
    pts = np.vstack([data.lf_points, data.hf_points])
    span_s = max(float(np.max(np.ptp(pts[:, :2], axis=0))), 1e-6)
    span_t = max(float(np.ptp(pts[:, 2])), 1e-6)
    r0 = 0.5
    if len(yh):
        lookup = {tuple(p): v for p, v in zip(data.lf_points.tolist(), yl.tolist())}
        pairs = [(lookup[tuple(p)], v) for p, v in zip(data.hf_points.tolist(), yh.tolist())
                 if tuple(p) in lookup]
        if len(pairs) >= 3:
            a = np.asarray(pairs)
            va = np.var(a[:, 0])
            if va > 1e-12:
                r0 = float(np.cov(a[:, 0], a[:, 1])[0, 1] / va)
    if rho is None:
        rho = constant(r0)
    elif rho.kind is not RhoKind.EMPIRICAL and rho.n_trainable and not any(rho.coef):
        rho = rho.with_coef([r0] + [0.0] * (rho.n_trainable - 1))
    vd = max(float(np.var(yh - r0 * np.mean(yl))) if len(yh) else 1.0, 1e-6)
    return MfHyperParams(
        KernelParams(0.9 * vl, span_s / 4.0, span_t / 4.0),
        KernelParams(0.9 * vd, span_s / 4.0, span_t / 4.0),
        NoiseModel(0.1 * vl, 0.1 * vd),
        rho,
    )


def fit(data: MfData, config: ModelConfig, init: MfHyperParams | None = None, *,
        restarts: int = 3, maxfev: int = 500, fatol: float = 1e-6, seed: int = 0,
        perturb: float = 0.3) -> FitResult:
    """Minimise the NLML with Nelder-Mead over transformed parameters.

    Positive parameters are optimised on the log scale, coupling coefficients
    on the identity scale.  The first chain starts at ``init``; each of the
    ``restarts`` further chains starts from the best point so far, perturbed
    with seeded Gaussian noise and given a half-size simplex with random edge
    signs.  The first simplex has edges of ``SIMPLEX_STEP`` on the log scale
    (a fifth of that for coupling coefficients).  A chain counts as converged
    when the spread
    of NLML values over its simplex falls below ``fatol`` within ``maxfev``
    evaluations.
    """
    init = init if init is not None else default_init(data)
    prob = MfProblem(data, config)
    history = []

    def f(theta):
        try:
            params = init.from_vector(theta)
        except ValueError:
            return np.inf
        val = prob.objective(params)
        history.append(val)
        return val

    rng = np.random.default_rng(seed)
    best_x = init.to_vector()
    best_f = f(best_x)
    # simplex edges: multiplicative for positive parameters, additive for rho
    step = np.full(len(best_x), SIMPLEX_STEP)
    step[N_POSITIVE:] = 0.2 * SIMPLEX_STEP
    converged = False
    nit = 0
    for chain in range(restarts + 1):
        x0 = best_x.copy()
        edge = step
        if chain:
            scale = np.full(len(x0), perturb)
            scale[N_POSITIVE:] = 0.1 * perturb
            x0 = x0 + scale * rng.standard_normal(len(x0))
            edge = 0.5 * step * rng.choice([-1.0, 1.0], size=len(x0))
        simplex = np.vstack([x0, x0 + np.diag(edge)])
        res = minimize(f, x0, method="Nelder-Mead",
                       options={"maxfev": maxfev, "fatol": fatol, "xatol": np.inf,
                                "adaptive": True, "initial_simplex": simplex})
        nit += int(res.nit)
        if np.isfinite(res.fun) and res.fun <= best_f:
            best_x, best_f = res.x, float(res.fun)
            converged = bool(res.success)
        elif chain == 0:
            converged = bool(res.success) and np.isfinite(best_f)
        log.debug("chain %d: nlml=%.6g success=%s", chain, res.fun, res.success)
    if not np.isfinite(best_f):
        raise OptimizationFailed("every optimisation chain returned +inf")
    params = init.from_vector(best_x)
    val, _, gfit = prob.nlml(params)
    return FitResult(params, val, gfit, nit, len(history), converged, history)


@dataclass
class Prediction:
    mean: np.ndarray
    variance: np.ndarray

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.variance)

    @property
    def lower(self) -> np.ndarray:
        return self.mean - 1.96 * self.sd

    @property
    def upper(self) -> np.ndarray:
        return self.mean + 1.96 * self.sd

    @property
    def interval_95(self):
        return self.lower, self.upper


def predict(params: MfHyperParams, data: MfData, config: ModelConfig, targets, *,
            system=None, gls_fit: GlsFit | None = None, batch: int = 512,
            include_noise: bool = True) -> Prediction:
    """Posterior of HF observations at ``targets`` (``(T, 3)`` points).

    The variance is observation level (includes the HF nugget) unless
    ``include_noise`` is false.  With GLS the fitted HF mean (intercept or
    trend) is added back to the mean.
    """
    if isinstance(params, FitResult):
        gls_fit = gls_fit or params.gls
        params = params.params
    X = np.asarray(targets, dtype=float).reshape(-1, 3)
    if system is None or (config.gls.enabled and gls_fit is None):
        prob = MfProblem(data, config)
        _, system, gls_fit = prob.nlml(params)
    if config.gls.enabled:
        alpha = gls_fit.kinv_residual
        offset = design_rows(gls_fit.design, X, "hf" if data.n_hf else "lf") @ gls_fit.beta_hat
    else:
        alpha = system.solve_K(data.y)
        offset = np.zeros(len(X))
    kl, kd = params.kernel_lf, params.kernel_delta
    r_t = params.rho_at(X)
    r_h = params.rho_at(data.hf_points)
    mean = np.empty(len(X))
    var = np.empty(len(X))
    for a in range(0, len(X), batch):
        Xb, rb = X[a:a + batch], r_t[a:a + batch]
        c_l = latent_cross(data.lf_points, Xb, kl) * rb[None, :]
        parts = [c_l]
        if data.n_hf:
            c_h = (np.outer(r_h, rb) * latent_cross(data.hf_points, Xb, kl)
                   + latent_cross(data.hf_points, Xb, kd))
            parts.append(c_h)
        C = np.vstack(parts)
        mean[a:a + batch] = C.T @ alpha
        prior = rb**2 * (kl.sigma + kl.jitter) + kd.sigma + kd.jitter
        var[a:a + batch] = prior - np.einsum("ij,ij->j", C, system.solve_K(C))
    mean += offset
    var = np.maximum(var, 1e-12 * (kl.sigma + kd.sigma))
    if include_noise:
        var = var + params.noise.var_hf
    return Prediction(mean, var)


class BaselineKind:
    GP_L = "gp-l"
    GP_3D = "gp-3d"
    GP_4D = "gp-4d"
    ALL = ("gp-l", "gp-3d", "gp-4d")


def lf_values_at(data: MfData, points) -> np.ndarray:
    """LF responses at exactly matching space-time points."""
    lookup = {tuple(p): v for p, v in zip(data.lf_points.tolist(), data.y_lf.tolist())}
    out = []
    for i, p in enumerate(np.asarray(points, dtype=float).reshape(-1, 3).tolist()):
        try:
            out.append(lookup[tuple(p)])
        except KeyError:
            raise ValueError(f"no LF value at target row {i} {tuple(p)}") from None
    return np.asarray(out)


def _baseline_inputs(kind, points, y_l):
    if kind == BaselineKind.GP_L:
        return y_l[:, None]
    if kind == BaselineKind.GP_3D:
        return points
    if kind == BaselineKind.GP_4D:
        return np.column_stack([y_l, points])
    raise ValueError(f"unknown baseline {kind!r}")


def baseline_fit_predict(kind: str, data: MfData, targets, target_lf=None, *,
                         cap: int = DENSE_CAP, seed: int = 0) -> Prediction:
    """Single-fidelity dense GP baseline trained on the HF rows.

    ``gp-l`` regresses ``y_H`` on the co-located LF value, ``gp-3d`` on
    ``(s1, s2, t)`` and ``gp-4d`` on ``(y_L, s1, s2, t)``.
    """
    X = np.asarray(targets, dtype=float).reshape(-1, 3)
    need_lf = kind != BaselineKind.GP_3D
    yl_train = lf_values_at(data, data.hf_points) if need_lf else None
    if need_lf:
        yl_test = (np.asarray(target_lf, dtype=float) if target_lf is not None
                   else lf_values_at(data, X))
    else:
        yl_test = None
    Xtr = _baseline_inputs(kind, data.hf_points, yl_train)
    Xte = _baseline_inputs(kind, X, yl_test)
    gp = fit_dense_gp(Xtr, data.y_hf, cap=cap, seed=seed)
    mu, var = gp.predict(Xte, include_noise=True)
    return Prediction(mu, var)
