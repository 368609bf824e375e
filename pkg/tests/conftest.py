"""Shared fixtures.

Test docstrings open with a provenance tag:

* ``[DERIVED]`` value computed independently (dense oracle, hand algebra,
  brute force or Monte-Carlo);
* ``[PAPER]`` published reference value or trend, checked within a band;
* ``[TRIVIAL]`` follows directly from a definition or a degenerate limit.
"""
from __future__ import annotations

import numpy as np
import pytest

from mfvecchia import KernelParams, MfData, MfHyperParams, NoiseModel, constant


def grid_points(locs, times):
    locs = np.asarray(locs, dtype=float).reshape(-1, 2)
    times = np.asarray(times, dtype=float)
    return np.column_stack([np.repeat(locs, len(times), axis=0), np.tile(times, len(locs))])


def mixed_data(seed=0, n_lf_loc=6, n_hf_loc=4, n_time=5, extra_hf=2, drop=0.1):
    """Small LF/HF data set: HF partly nested in LF, partly HF-only, ragged times."""
    rng = np.random.default_rng(seed)
    lf_locs = rng.uniform(0, 4, size=(n_lf_loc, 2))
    times = np.sort(rng.uniform(0, 1, size=n_time))
    lf = grid_points(lf_locs, times)
    lf = lf[rng.uniform(size=len(lf)) > drop]
    hf_locs = np.vstack([lf_locs[:n_hf_loc - extra_hf], rng.uniform(0, 4, size=(extra_hf, 2))])
    hf = grid_points(hf_locs, times)
    hf = hf[rng.uniform(size=len(hf)) > drop]
    station = np.array([np.nonzero((hf_locs == p[:2]).all(axis=1))[0][0] for p in hf])
    y_lf = rng.standard_normal(len(lf)) + 1.5
    y_hf = 0.7 * rng.standard_normal(len(hf)) - 0.5
    return MfData(lf, y_lf, hf, y_hf, station)


def small_params(rho=None):
    return MfHyperParams(
        KernelParams(1.3, 1.1, 0.4),
        KernelParams(0.8, 0.9, 0.3),
        NoiseModel(0.05, 0.08),
        rho if rho is not None else constant(0.6),
    )


@pytest.fixture
def data():
    return mixed_data()


@pytest.fixture
def params():
    return small_params()


#: One "CRITERION n: PASS/FAIL ..." line per acceptance criterion, in run order.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
