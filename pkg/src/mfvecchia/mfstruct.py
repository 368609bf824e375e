"""Multi-fidelity system assembly and Woodbury-based solves.

The joint covariance of ``y = [y_L; y_H]`` is written as

    K = A Sigma_w A^T + D_eps,   A = [[Z1, 0], [R Z21, P_delta]]

with ``Sigma_w = blkdiag(Sigma_L, Sigma_delta)`` the latent covariances
(replaced by their Vecchia approximations), ``R = diag(rho at HF rows)`` and
``D_eps`` the nugget variances.  Solves use

    K^{-1} = D^{-1} - D^{-1} A H^{-1} A^T D^{-1},   H = Sigma_w^{-1} + A^T D^{-1} A

and ``log|K| = log|Sigma_w| + log|H| + log|D|``.  Neither ``K`` nor its
inverse is ever formed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._sparse import CholeskyFailure, SparseCholesky
from .kernels import as_points
from .vecchia import VecchiaFactor

__all__ = [
    "CholeskyFailure",
    "FidelityLayout",
    "MfSystem",
    "NoiseModel",
    "assemble",
    "build_layout",
]


@dataclass(frozen=True)
class NoiseModel:
    """Nugget variances of the LF and HF observations."""

    var_lf: float
    var_hf: float

    def __post_init__(self):
        for name in ("var_lf", "var_hf"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be finite and positive, got {v!r}")


@dataclass(frozen=True)
class FidelityLayout:
    """Mapping of LF/HF observation rows onto latent space-time points.

    The latent LF process is indexed by space-time points covering every
    observation at either fidelity (see :func:`build_layout`).  ``z1[r]`` and ``z21[j]`` give the latent index of LF
    row ``r`` and HF row ``j``; the discrepancy process lives on the HF rows.
    """

    lf_points: np.ndarray
    hf_points: np.ndarray
    latent_points: np.ndarray
    z1: np.ndarray
    z21: np.ndarray
    n_locations: int
    nested: bool

    @property
    def n_lf(self) -> int:
        return len(self.lf_points)

    @property
    def n_hf(self) -> int:
        return len(self.hf_points)

    @property
    def n_latent(self) -> int:
        return len(self.latent_points)

    def Z1(self) -> sp.csr_matrix:
        return _incidence(self.z1, self.n_latent)

    def Z21(self) -> sp.csr_matrix:
        return _incidence(self.z21, self.n_latent)


def _incidence(idx: np.ndarray, ncols: int) -> sp.csr_matrix:
    n = len(idx)
    return sp.csr_matrix((np.ones(n), (np.arange(n), idx)), shape=(n, ncols))


def _check_unique(points: np.ndarray, label: str):
    if len(points) and len(np.unique(points, axis=0)) != len(points):
        raise ValueError(f"duplicate (s1, s2, t) rows in the {label} data")


def build_layout(lf_points, hf_points, latent: str = "grid") -> FidelityLayout:
    """Match LF and HF rows to a shared latent point set by exact equality.

    ``latent="grid"`` indexes the latent LF process by every distinct
    location crossed with every distinct time stamp (locations in order of
    first appearance, LF before HF; times ascending).  ``latent="observed"``
    keeps only the distinct space-time points that were actually observed.
    """
    if latent not in ("grid", "observed"):
        raise ValueError(f"unknown latent layout {latent!r}")
    lf = as_points(lf_points) if len(lf_points) else np.zeros((0, 3))
    hf = as_points(hf_points) if len(hf_points) else np.zeros((0, 3))
    if len(lf) == 0:
        raise ValueError("at least one LF observation is required")
    _check_unique(lf, "LF")
    _check_unique(hf, "HF")
    both = np.vstack([lf, hf])
    locs, loc_first, loc_inv = np.unique(
        both[:, :2], axis=0, return_index=True, return_inverse=True
    )
    loc_rank = np.empty(len(locs), dtype=np.int64)
    loc_rank[np.argsort(loc_first, kind="stable")] = np.arange(len(locs))
    loc_id = loc_rank[loc_inv.reshape(-1)]
    if latent == "grid":
        times, t_id = np.unique(both[:, 2], return_inverse=True)
        t_id = t_id.reshape(-1)
        site = np.empty((len(locs), 2))
        site[loc_rank] = locs
        T = len(times)
        latent_pts = np.column_stack(
            [np.repeat(site, T, axis=0), np.tile(times, len(locs))]
        )
        idx = loc_id * T + t_id
    else:
        _, first, inverse = np.unique(both, axis=0, return_index=True, return_inverse=True)
        rank = np.empty(len(first), dtype=np.int64)
        order = np.argsort(first, kind="stable")
        rank[order] = np.arange(len(first))
        latent_pts = both[first[order]]
        idx = rank[inverse.reshape(-1)]
    nl = len(lf)
    return FidelityLayout(
        lf_points=lf,
        hf_points=hf,
        latent_points=latent_pts,
        z1=idx[:nl],
        z21=idx[nl:],
        n_locations=len(locs),
        nested=set(loc_id[nl:].tolist()) <= set(loc_id[:nl].tolist()),
    )


class MfSystem:
    """Assembled sparse system for one set of hyperparameters.

    ``factor_lf`` must be built on ``layout.latent_points[factor_lf.perm]``
    and ``factor_hf`` on ``layout.hf_points[factor_hf.perm]``.
    """

    def __init__(self, layout: FidelityLayout, factor_lf: VecchiaFactor,
                 factor_hf: VecchiaFactor | None, rho_hf, noise: NoiseModel):
        self.layout = layout
        self.factor_lf = factor_lf
        self.factor_hf = factor_hf
        self.noise = noise
        n_lf, n_hf = layout.n_lf, layout.n_hf
        rho_hf = np.broadcast_to(np.asarray(rho_hf, dtype=float), (n_hf,)).copy()
        if not np.all(np.isfinite(rho_hf)):
            raise ValueError("rho values must be finite")
        self.rho_hf = rho_hf
        nl = factor_lf.n
        nd = factor_hf.n if factor_hf is not None else 0
        if nl != layout.n_latent or nd != n_hf:
            raise ValueError("factor sizes do not match the layout")
        pos_l = _inverse(factor_lf.perm, nl)
        rows = [np.arange(n_lf)]
        cols = [pos_l[layout.z1]]
        vals = [np.ones(n_lf)]
        if n_hf:
            pos_d = _inverse(factor_hf.perm, nd)
            hrows = n_lf + np.arange(n_hf)
            rows += [hrows, hrows]
            cols += [pos_l[layout.z21], nl + pos_d]
            vals += [rho_hf, np.ones(n_hf)]
        self.A = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_lf + n_hf, nl + nd),
        )
        self.d_inv = np.concatenate(
            [np.full(n_lf, 1.0 / noise.var_lf), np.full(n_hf, 1.0 / noise.var_hf)]
        )
        blocks = [factor_lf.precision()]
        if n_hf:
            blocks.append(factor_hf.precision())
        prec_w = sp.block_diag(blocks, format="csc")
        AtDA = (self.A.T @ sp.diags(self.d_inv) @ self.A).tocsc()
        H = (prec_w + AtDA).tocsc()
        H.eliminate_zeros()
        H.sort_indices()
        self.H = H
        # Time-sorted latent order competes with AMD; it wins on long time axes.
        coords = layout.latent_points[factor_lf.perm]
        if n_hf:
            coords = np.vstack([coords, layout.hf_points[factor_hf.perm]])
        hint = np.lexsort(np.atleast_2d(coords.reshape(len(coords), -1).T))  # time is last
        self.chol = SparseCholesky(H, hint=hint)  # raises CholeskyFailure
        self.logdet_sigma_w = factor_lf.logdet() + (factor_hf.logdet() if n_hf else 0.0)
        self.logdet_H = self.chol.logdet()
        self.logdet_D = n_lf * np.log(noise.var_lf) + n_hf * np.log(noise.var_hf)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def solve_K(self, V) -> np.ndarray:
        """``K^{-1} V`` for one or more right-hand sides."""
        V = np.asarray(V, dtype=float)
        vec = V.ndim == 1
        V2 = V.reshape(self.n, -1)
        DV = self.d_inv[:, None] * V2
        W = self.chol.solve(self.A.T @ DV)
        out = DV - self.d_inv[:, None] * (self.A @ W)
        return out[:, 0] if vec else out

    def logdet_K(self) -> float:
        return self.logdet_sigma_w + self.logdet_H + self.logdet_D

    def sparsity_report(self) -> dict:
        k = self.H.shape[0]
        return {
            "nnz_H": int(self.H.nnz),
            "density_H": self.H.nnz / float(k * k),
            "nnz_cholH": int(self.chol.nnz),
        }

    def dense_K(self) -> np.ndarray:
        """Dense ``A Sigma_w A^T + D`` from the (approximate) factors.

        Diagnostic only: inverts the latent precisions densely.
        """
        blocks = [np.linalg.inv(self.factor_lf.precision().toarray())]
        if self.factor_hf is not None and self.layout.n_hf:
            blocks.append(np.linalg.inv(self.factor_hf.precision().toarray()))
        from scipy.linalg import block_diag

        Sw = block_diag(*blocks)
        A = self.A.toarray()
        return A @ Sw @ A.T + np.diag(1.0 / self.d_inv)


def _inverse(perm, n) -> np.ndarray:
    if perm is None:
        return np.arange(n)
    pos = np.empty(n, dtype=np.int64)
    pos[np.asarray(perm)] = np.arange(n)
    return pos


def assemble(layout: FidelityLayout, factor_lf: VecchiaFactor,
             factor_hf: VecchiaFactor | None, rho_hf, noise: NoiseModel) -> MfSystem:
    return MfSystem(layout, factor_lf, factor_hf, rho_hf, noise)
