"""Separable space-time squared-exponential covariance functions.

All point sets are float arrays of shape ``(n, 3)`` holding ``(s1, s2, t)``.
The amplitude ``sigma`` multiplies the exponentials directly, i.e. it is the
covariance at zero lag and is *not* squared internally (many GP libraries
square it; this one does not).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

#: Relative jitter added to latent covariance diagonals (times ``sigma``).
JITTER_REL = 1e-8


class SpaceTimePoint(NamedTuple):
    s1: float
    s2: float
    t: float


@dataclass(frozen=True)
class KernelParams:
    """Amplitude and length scales of one separable RBF kernel."""

    sigma: float
    length_space: float
    length_time: float

    def __post_init__(self):
        for name in ("sigma", "length_space", "length_time"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be finite and positive, got {v!r}")

    @property
    def jitter(self) -> float:
        return JITTER_REL * self.sigma

    def scaled(self, points: np.ndarray) -> np.ndarray:
        """Coordinates divided by the length scales (space, space, time)."""
        points = as_points(points)
        scale = np.array([self.length_space, self.length_space, self.length_time])
        return points / scale


def as_points(points) -> np.ndarray:
    """Coerce to a finite ``(n, 3)`` float array."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"points must have shape (n, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points contain non-finite coordinates")
    return arr


def eval_separable(p, q, kp: KernelParams) -> float:
    """Kernel value between two space-time points."""
    p = as_points(p)[0]
    q = as_points(q)[0]
    ds2 = (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2
    dt2 = (p[2] - q[2]) ** 2
    return float(
        kp.sigma
        * np.exp(-ds2 / (2.0 * kp.length_space**2))
        * np.exp(-dt2 / (2.0 * kp.length_time**2))
    )


def sq_dists(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Explicit differences (not the |a|^2 - 2ab + |b|^2 expansion) keep
    # zero lags exactly zero and the result exactly symmetric.
    ds = a[:, None, :2] - b[None, :, :2]
    dt = a[:, None, 2] - b[None, :, 2]
    return np.einsum("ijk,ijk->ij", ds, ds), dt * dt


def cross_gram(rows, cols, kp: KernelParams) -> np.ndarray:
    """Matrix of pairwise kernel values, shape ``(len(rows), len(cols))``."""
    rows = as_points(rows)
    cols = as_points(cols)
    ds2, dt2 = sq_dists(rows, cols)
    return kp.sigma * np.exp(
        -ds2 / (2.0 * kp.length_space**2) - dt2 / (2.0 * kp.length_time**2)
    )


def gram(points, kp: KernelParams, jitter: float = 0.0) -> np.ndarray:
    """Symmetric Gram matrix with ``jitter`` added on the diagonal."""
    points = as_points(points)
    if len(points) == 0:
        raise ValueError("gram() needs at least one point")
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    K = cross_gram(points, points, kp)
    K[np.diag_indices_from(K)] = kp.sigma + jitter
    return K


def latent_cov(points, kp: KernelParams) -> np.ndarray:
    """Gram matrix of a latent process, including the default jitter."""
    return gram(points, kp, jitter=kp.jitter)


def batched_gram(pts: np.ndarray, kp: KernelParams) -> np.ndarray:
    """Gram matrices for a stack of point sets, ``pts`` of shape (b, k, 3)."""
    ds = pts[:, :, None, :2] - pts[:, None, :, :2]
    dt = pts[:, :, None, 2] - pts[:, None, :, 2]
    ex = -np.einsum("bijk,bijk->bij", ds, ds) / (2.0 * kp.length_space**2)
    ex -= dt * dt / (2.0 * kp.length_time**2)
    return kp.sigma * np.exp(ex)


def batched_cross(pts: np.ndarray, x: np.ndarray, kp: KernelParams) -> np.ndarray:
    """Kernel between each stacked set ``pts`` (b, k, 3) and ``x`` (b, 3)."""
    ds = pts[:, :, :2] - x[:, None, :2]
    dt = pts[:, :, 2] - x[:, None, 2]
    ex = -np.einsum("bik,bik->bi", ds, ds) / (2.0 * kp.length_space**2)
    ex -= dt * dt / (2.0 * kp.length_time**2)
    return kp.sigma * np.exp(ex)
