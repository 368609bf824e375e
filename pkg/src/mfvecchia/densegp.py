"""Small dense GP regression with an ARD squared-exponential kernel.

Used for the spatial smoother of empirical coupling slopes and for the
single-fidelity baselines.  Hyperparameters (amplitude, one length scale per
input dimension, noise variance) are fitted by maximising the marginal
likelihood with L-BFGS-B on log-transformed values and analytic gradients.
The mean is the constant sample mean of the targets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize

__all__ = ["DenseGP", "DenseSizeExceeded", "fit_dense_gp", "DENSE_CAP"]

DENSE_CAP = 5000
_LOG2PI = np.log(2.0 * np.pi)


class DenseSizeExceeded(ValueError):
    """Problem too large for a dense method."""


def check_dense_size(n: int, cap: int = DENSE_CAP):
    if n > cap:
        raise DenseSizeExceeded(f"{n} rows exceed the dense cap of {cap}")


def _ard(X1, X2, amp, lengths):
    d = (X1[:, None, :] - X2[None, :, :]) / lengths
    return amp * np.exp(-0.5 * np.einsum("ijk,ijk->ij", d, d))


@dataclass
class DenseGP:
    X: np.ndarray
    y: np.ndarray
    mean: float
    amp: float
    lengths: np.ndarray
    noise: float
    nlml: float = np.nan

    def __post_init__(self):
        K = _ard(self.X, self.X, self.amp, self.lengths)
        K[np.diag_indices_from(K)] += self.noise
        self._cf = cho_factor(K, lower=True)
        self._alpha = cho_solve(self._cf, self.y - self.mean)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def predict(self, Xs, include_noise: bool = True, return_var: bool = True):
        Xs = np.asarray(Xs, dtype=float).reshape(-1, self.dim)
        Ks = _ard(Xs, self.X, self.amp, self.lengths)
        mu = self.mean + Ks @ self._alpha
        if not return_var:
            return mu
        v = solve_triangular(self._cf[0], Ks.T, lower=True)
        var = self.amp - np.einsum("ij,ij->j", v, v)
        var = np.maximum(var, 0.0)
        if include_noise:
            var = var + self.noise
        return mu, var


def _nlml_and_grad(theta, X, yc, noise_floor):
    n, p = X.shape
    amp = np.exp(theta[0])
    lengths = np.exp(theta[1:1 + p])
    noise = np.exp(theta[-1]) + noise_floor
    d2 = (X[:, None, :] - X[None, :, :]) ** 2
    E = amp * np.exp(-0.5 * np.einsum("ijk,k->ij", d2, 1.0 / lengths**2))
    K = E.copy()
    K[np.diag_indices_from(K)] += noise
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return 1e25, np.zeros_like(theta)
    alpha = cho_solve((L, True), yc)
    val = 0.5 * yc @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * _LOG2PI
    W = cho_solve((L, True), np.eye(n)) - np.outer(alpha, alpha)
    g = np.empty_like(theta)
    g[0] = 0.5 * np.sum(W * E)
    for k in range(p):
        g[1 + k] = 0.5 * np.sum(W * E * d2[:, :, k]) / lengths[k] ** 2
    g[-1] = 0.5 * np.trace(W) * (noise - noise_floor)
    return val, g


def fit_dense_gp(X, y, *, noise_floor: float | None = None, restarts: int = 3,
                 seed: int = 0, cap: int = DENSE_CAP, fixed: dict | None = None) -> DenseGP:
    """Fit a dense ARD-RBF GP by marginal likelihood.

    Parameters
    ----------
    X, y : training inputs ``(n, p)`` and targets ``(n,)``.
    noise_floor : lower bound added to the noise variance. Defaults to
        ``max(1e-6 * var(y), 1e-10)``.
    restarts : number of extra random starts after the data-driven one.
    fixed : optional ``{"amp":..., "lengths":..., "noise":...}``; when given
        no optimisation is performed.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).reshape(-1)
    n, p = X.shape
    if n != len(y) or n < 1:
        raise ValueError("X and y must be non-empty with matching lengths")
    check_dense_size(n, cap)
    mean = float(np.mean(y))
    yc = y - mean
    var = float(np.var(y))
    if noise_floor is None:
        noise_floor = max(1e-6 * var, 1e-10)
    if fixed is not None:
        lengths = np.broadcast_to(np.asarray(fixed["lengths"], dtype=float), (p,)).copy()
        return DenseGP(X, y, mean, float(fixed["amp"]), lengths, float(fixed["noise"]))

    span = np.ptp(X, axis=0)
    span[span <= 0] = 1.0
    scale = max(var, 1e-12)
    lo = np.r_[np.log(scale * 1e-4), np.log(span * 1e-2), np.log(max(scale * 1e-8, 1e-14))]
    hi = np.r_[np.log(scale * 1e2), np.log(span * 1e2), np.log(scale * 10.0)]
    start = np.r_[np.log(scale), np.log(span / 2.0), np.log(scale * 0.1)]
    rng = np.random.default_rng(seed)
    starts = [start] + [rng.uniform(lo, hi) for _ in range(restarts)]
    best = None
    for s0 in starts:
        res = minimize(_nlml_and_grad, np.clip(s0, lo, hi), args=(X, yc, noise_floor),
                       jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)))
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    th = best.x
    return DenseGP(X, y, mean, float(np.exp(th[0])), np.exp(th[1:1 + p]),
                   float(np.exp(th[-1]) + noise_floor), nlml=float(best.fun))
