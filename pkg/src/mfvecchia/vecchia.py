"""Vecchia approximation of a single latent Gaussian process.

Points are ordered, each point conditions on at most ``m`` of its
predecessors, and the resulting conditional regressions give a sparse upper
triangular ``U`` with ``Sigma^{-1} ~= U U^T``:

    U[i, i]    = 1 / sqrt(d_i)
    U[C(i), i] = -b_i / sqrt(d_i)

where ``b_i = K(C,C)^{-1} K(C,i)`` and ``d_i = K(i,i) - K(i,C) b_i``.
The approximation is exact when every point conditions on all predecessors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.spatial import cKDTree

from .kernels import KernelParams, as_points

#: Conditional variances below ``VARIANCE_FLOOR * sigma`` are an error.
VARIANCE_FLOOR = 1e-12


class NonPositiveConditionalVariance(np.linalg.LinAlgError):
    def __init__(self, index: int, value: float):
        super().__init__(f"conditional variance {value:.3e} at ordered index {index}")
        self.index = index
        self.value = value


class Ordering(str, Enum):
    SPACE_MAJOR = "space-major"
    TIME_MAJOR = "time-major"
    TIME_MAJOR_RANDSPACE = "time-major-randspace"
    RANDOM = "random"


@dataclass(frozen=True)
class OrderingStrategy:
    kind: Ordering = Ordering.SPACE_MAJOR
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Ordering(self.kind))


class Conditioning(str, Enum):
    NEAREST_NEIGHBOR = "nn"
    CORRELATION = "corr"


@dataclass(frozen=True)
class ConditioningRule:
    kind: Conditioning = Conditioning.CORRELATION
    m: int = 15

    def __post_init__(self):
        object.__setattr__(self, "kind", Conditioning(self.kind))
        if int(self.m) < 1:
            raise ValueError("m must be at least 1")


# ---------------------------------------------------------------- ordering


def _group_ids(values: np.ndarray) -> np.ndarray:
    """Integer ids of distinct rows, numbered by first appearance."""
    _, first, inverse = np.unique(values, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse]


def order_points(points, strategy: OrderingStrategy) -> np.ndarray:
    """Permutation of ``points`` realizing an ordering strategy.

    Locations are numbered by first appearance; times sort ascending.
    """
    pts = as_points(points)
    n = len(pts)
    if n == 0:
        raise ValueError("cannot order an empty point set")
    if len(np.unique(pts, axis=0)) != n:
        raise ValueError("duplicate (s1, s2, t) points make the ordering ambiguous")
    loc = _group_ids(pts[:, :2])
    t = pts[:, 2]
    kind = strategy.kind
    if kind is Ordering.SPACE_MAJOR:
        return np.lexsort((t, loc))
    if kind is Ordering.TIME_MAJOR:
        return np.lexsort((loc, t))
    rng = np.random.default_rng(strategy.seed)
    if kind is Ordering.RANDOM:
        return rng.permutation(n)
    # time-major with an independent location shuffle per time step
    key = np.empty(n)
    _, tid = np.unique(t, return_inverse=True)
    tid = tid.reshape(-1)
    nloc = loc.max() + 1
    for k in range(tid.max() + 1):
        shuffle = rng.permutation(nloc)
        sel = tid == k
        key[sel] = shuffle[loc[sel]]
    return np.lexsort((key, t))


# -------------------------------------------------------- neighbor search


def conditioning_coordinates(points, rule: ConditioningRule, kp: KernelParams | None):
    """Coordinates in which Euclidean distance ranks candidate neighbors.

    Nearest-neighbor conditioning standardizes each axis to unit sample
    standard deviation.  Correlation conditioning divides by the kernel
    length scales, under which Euclidean order is kernel-value order.
    """
    pts = as_points(points)
    if rule.kind is Conditioning.CORRELATION:
        if kp is None:
            raise ValueError("correlation conditioning needs kernel parameters")
        return kp.scaled(pts)
    sd = pts.std(axis=0)
    sd[sd == 0] = 1.0
    return (pts - pts.mean(axis=0)) / sd


@njit(cache=True)
def _brute_neighbors(Z, m, start, stop):
    n_out = stop - start
    out = np.full((n_out, m), -1, dtype=np.int64)
    for r in range(n_out):
        i = start + r
        if i == 0:
            continue
        d = np.empty(i)
        for j in range(i):
            acc = 0.0
            for a in range(Z.shape[1]):
                diff = Z[i, a] - Z[j, a]
                acc += diff * diff
            d[j] = acc
        order = np.argsort(d, kind="mergesort")  # stable: ties by lower index
        k = min(m, i)
        for q in range(k):
            out[r, q] = order[q]
    return out


def _sq(Z, rows, cand):
    # Same summation order as _brute_neighbors so that ties resolve alike.
    diff = Z[cand] - Z[rows][:, None, :]
    acc = diff[..., 0] * diff[..., 0]
    for a in range(1, Z.shape[1]):
        acc = acc + diff[..., a] * diff[..., a]
    return acc


def neighbor_sets_bruteforce(Z: np.ndarray, m: int) -> np.ndarray:
    """Reference O(n^2) neighbor search; ties go to the lower index."""
    Z = np.ascontiguousarray(Z, dtype=float)
    return _brute_neighbors(Z, int(m), 0, len(Z))


def neighbor_sets(Z: np.ndarray, m: int, brute_threshold: int = 256) -> np.ndarray:
    """For every i, the ``m`` predecessors j < i closest to point i.

    Returns an ``(n, m)`` array padded with -1 for the first rows; within a
    row neighbors are sorted by (distance, index).  Uses KD-trees over
    geometrically growing prefixes, falling back to brute force for the
    first rows and for any row where the candidate list might cut a tie.
    """
    Z = np.ascontiguousarray(Z, dtype=float)
    n = len(Z)
    m = int(m)
    out = np.full((n, m), -1, dtype=np.int64)
    head = min(n, max(brute_threshold, 4 * m))
    out[:head] = _brute_neighbors(Z, m, 0, head)
    a = head
    while a < n:
        b = min(n, 2 * a)
        tree = cKDTree(Z[:b])
        pending = np.arange(a, b)
        k = min(b, 2 * m + 8)
        while pending.size:
            dist, ind = tree.query(Z[pending], k=k)
            dist = dist.reshape(len(pending), k)
            ind = ind.reshape(len(pending), k)
            prior = ind < pending[:, None]
            d2 = np.where(prior, _sq(Z, pending, np.where(prior, ind, 0)), np.inf)
            order = np.lexsort((ind, d2), axis=-1)
            d2s = np.take_along_axis(d2, order, axis=-1)
            inds = np.take_along_axis(ind, order, axis=-1)
            mth = d2s[:, m - 1]
            # Safe if the m-th prior distance is strictly inside the
            # searched ball (no unseen point can tie or beat it).
            ok = np.isfinite(mth) & (np.sqrt(mth) * (1 + 1e-9) + 1e-300 < dist[:, -1])
            if k >= b:
                ok[:] = True
            out[pending[ok]] = inds[ok, :m]
            pending = pending[~ok]
            if k >= b:
                break
            k = min(b, 2 * k)
        a = b
    return out


def select_neighbors(i: int, ordered_points, rule: ConditioningRule,
                     kp: KernelParams | None = None) -> np.ndarray:
    """Conditioning set of the point at (0-based) position ``i``."""
    Z = conditioning_coordinates(ordered_points, rule, kp)
    if i == 0:
        return np.zeros(0, dtype=np.int64)
    row = _brute_neighbors(np.ascontiguousarray(Z), int(rule.m), i, i + 1)[0]
    return row[row >= 0]


# ------------------------------------------------------------------ factor


@dataclass
class VecchiaFactor:
    """Sparse inverse-Cholesky factor of one latent process.

    ``neighbors[i]`` holds the conditioning set of ordered point ``i``
    (padded with -1), ``coef[i]`` the regression coefficients ``b_i`` and
    ``condvar[i]`` the conditional variance ``d_i``.
    """

    neighbors: np.ndarray
    coef: np.ndarray
    condvar: np.ndarray
    perm: np.ndarray | None = None
    _U: sp.csc_matrix | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.condvar)

    @property
    def n_coefficients(self) -> int:
        return int(np.count_nonzero(self.neighbors >= 0))

    def U(self) -> sp.csc_matrix:
        if self._U is None:
            n = self.n
            valid = self.neighbors >= 0
            cols = np.broadcast_to(np.arange(n)[:, None], self.neighbors.shape)
            inv_sd = 1.0 / np.sqrt(self.condvar)
            rows = np.concatenate([np.arange(n), self.neighbors[valid]])
            colv = np.concatenate([np.arange(n), cols[valid]])
            vals = np.concatenate([inv_sd, (-self.coef * inv_sd[:, None])[valid]])
            self._U = sp.csc_matrix((vals, (rows, colv)), shape=(n, n))
        return self._U

    def precision(self) -> sp.csc_matrix:
        """Approximate precision matrix ``U U^T``."""
        U = self.U()
        return (U @ U.T).tocsc()

    def logdet(self) -> float:
        """log-determinant of the approximated covariance."""
        return float(np.sum(np.log(self.condvar)))

    def apply_precision(self, v: np.ndarray) -> np.ndarray:
        U = self.U()
        return U @ (U.T @ np.asarray(v, dtype=float))


@njit(cache=True)
def _factor_rows(X, nb, counts, sigma, inv_ls2, inv_lt2, diag, coef, condvar):
    """Conditional regressions row by row; returns the failing row or -1.

    For row ``i`` the augmented covariance of ``(X[C(i)], X[i])`` is factored
    in place; the last row of its Cholesky factor holds ``L_CC^{-1} k_Ci``
    and ``sqrt(d_i)``.
    """
    n, w = nb.shape
    A = np.empty((w + 1, w + 1))
    for i in range(n):
        c = counts[i]
        if c == 0:
            condvar[i] = diag
            continue
        for a in range(c + 1):
            pa = nb[i, a] if a < c else i
            for b in range(a):
                pb = nb[i, b]
                d0 = X[pa, 0] - X[pb, 0]
                d1 = X[pa, 1] - X[pb, 1]
                d2 = X[pa, 2] - X[pb, 2]
                A[a, b] = sigma * np.exp(-0.5 * (d0 * d0 + d1 * d1) * inv_ls2
                                         - 0.5 * d2 * d2 * inv_lt2)
            A[a, a] = diag
        for j in range(c + 1):
            s = A[j, j]
            for k in range(j):
                s -= A[j, k] * A[j, k]
            if not s > 0.0:
                condvar[i] = s
                return i
            ljj = np.sqrt(s)
            A[j, j] = ljj
            for r in range(j + 1, c + 1):
                s = A[r, j]
                for k in range(j):
                    s -= A[r, k] * A[j, k]
                A[r, j] = s / ljj
        for a in range(c - 1, -1, -1):
            s = A[c, a]
            for k in range(a + 1, c):
                s -= A[k, a] * coef[i, k]
            coef[i, a] = s / A[a, a]
        condvar[i] = A[c, c] * A[c, c]
    return -1


def build_factor(ordered_points, rule: ConditioningRule, kp: KernelParams,
                 nugget: float = 0.0, neighbors: np.ndarray | None = None) -> VecchiaFactor:
    """Vecchia factor for the latent covariance ``k + jitter*I (+ nugget*I)``.

    ``neighbors`` may be passed to reuse conditioning sets computed earlier
    (e.g. frozen across optimizer iterations); otherwise they are selected by
    ``rule``.
    """
    X = np.ascontiguousarray(as_points(ordered_points))
    n = len(X)
    m = int(rule.m)
    if neighbors is None:
        neighbors = neighbor_sets(conditioning_coordinates(X, rule, kp), m)
    else:
        neighbors = np.asarray(neighbors, dtype=np.int64)
        if neighbors.shape[0] != n:
            raise ValueError("neighbor array does not match the number of points")
    neighbors = np.ascontiguousarray(neighbors)
    width = neighbors.shape[1]
    counts = np.count_nonzero(neighbors >= 0, axis=1).astype(np.int64)
    coef = np.zeros((n, width))
    condvar = np.empty(n)
    diag = kp.sigma + kp.jitter + nugget
    bad = _factor_rows(X, neighbors, counts, kp.sigma, 1.0 / kp.length_space**2,
                       1.0 / kp.length_time**2, diag, coef, condvar)
    if bad >= 0:
        raise NonPositiveConditionalVariance(int(bad), float(condvar[bad]))
    bad = np.nonzero(~(condvar > VARIANCE_FLOOR * kp.sigma))[0]
    if bad.size:
        raise NonPositiveConditionalVariance(int(bad[0]), float(condvar[bad[0]]))
    return VecchiaFactor(neighbors, coef, condvar)
