"""Point and interval metrics for held-out predictions."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

__all__ = ["MetricSet", "compute_metrics", "mean_metrics", "summarize"]


@dataclass(frozen=True)
class MetricSet:
    mae: float
    rmse: float
    corr: float
    cov95: float
    nlml: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


def compute_metrics(observed, mean, variance, nlml: float = float("nan")) -> MetricSet:
    """MAE, RMSE, Pearson correlation and 95% interval coverage.

    Coverage counts observations within ``mean +- 1.96 sqrt(variance)``.
    The correlation is NaN when either series is constant.
    """
    y = np.asarray(observed, dtype=float)
    mu = np.asarray(mean, dtype=float)
    var = np.asarray(variance, dtype=float)
    if not (y.shape == mu.shape == var.shape) or y.size == 0:
        raise ValueError("observed, mean and variance must be equal-length, non-empty")
    e = mu - y
    half = 1.96 * np.sqrt(var)
    if np.std(y) > 0 and np.std(mu) > 0:
        corr = float(np.corrcoef(mu, y)[0, 1])
    else:
        corr = float("nan")
    return MetricSet(
        mae=float(np.mean(np.abs(e))),
        rmse=float(np.sqrt(np.mean(e * e))),
        corr=corr,
        cov95=float(np.mean(np.abs(e) <= half)),
        nlml=float(nlml),
    )


def mean_metrics(sets) -> MetricSet:
    """Unweighted mean over metric sets (NaNs ignored per field)."""
    sets = list(sets)
    if not sets:
        raise ValueError("no metric sets to average")
    fields = MetricSet.__dataclass_fields__
    out = {}
    for f in fields:
        vals = np.array([getattr(s, f) for s in sets], dtype=float)
        out[f] = float(np.nanmean(vals)) if np.any(np.isfinite(vals)) else float("nan")
    return MetricSet(**out)


def summarize(values) -> tuple[float, float | None]:
    """Mean and sample sd; sd is ``None`` with fewer than two values."""
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    if v.size == 0:
        return float("nan"), None
    sd = float(np.std(v, ddof=1)) if v.size > 1 else None
    return float(np.mean(v)), sd
