"""CSV ingestion of matched LF/HF data sets.

Expected headers are exactly ``s1,s2,t,y_L`` (LF) and
``station_id,s1,s2,t,y_H`` (HF).  ``t`` may be numeric or ISO-8601; in the
latter case both files are converted to hours since the earliest timestamp.
Each HF station is matched to its nearest LF location (ties go to the lower
``s1``, then the lower ``s2``).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from ..model import MfData

__all__ = [
    "EmptyFidelity",
    "NonFiniteValue",
    "RealDataset",
    "SchemaError",
    "ingest",
    "match_nearest",
]

LF_HEADER = ["s1", "s2", "t", "y_L"]
HF_HEADER = ["station_id", "s1", "s2", "t", "y_H"]


class SchemaError(ValueError):
    pass


class EmptyFidelity(ValueError):
    pass


class NonFiniteValue(ValueError):
    def __init__(self, path, row, column, value):
        super().__init__(f"{path}: row {row}, column '{column}': invalid value {value!r}")
        self.row = row
        self.column = column


@dataclass
class RealDataset:
    lf: np.ndarray                 # (N, 4) s1, s2, t, y_L
    hf: np.ndarray                 # (M, 5) station index, s1, s2, t, y_H
    station_names: list            # index -> original station id
    matching: dict                 # station index -> (s1, s2) of matched LF site
    match_distance: dict
    report: dict = field(default_factory=dict)
    time_origin: str | None = None

    def to_mfdata(self) -> MfData:
        return MfData.from_tables(self.lf, self.hf)

    def lf_at_hf(self, hf_rows=None) -> np.ndarray:
        """LF value at each HF row's matched site and time (NaN if absent)."""
        hf = self.hf if hf_rows is None else hf_rows
        lookup = {tuple(r[:3]): r[3] for r in self.lf.tolist()}
        out = np.full(len(hf), np.nan)
        for i, r in enumerate(hf.tolist()):
            s = self.matching[int(r[0])]
            out[i] = lookup.get((s[0], s[1], r[3]), np.nan)
        return out

    def matching_rows(self) -> list:
        return [{"station_id": self.station_names[k], "s1": float(self.hf[self.hf[:, 0] == k][0, 1]),
                 "s2": float(self.hf[self.hf[:, 0] == k][0, 2]), "lf_s1": v[0], "lf_s2": v[1],
                 "distance": self.match_distance[k]} for k, v in sorted(self.matching.items())]


def _read(path, header):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            got = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyFidelity(f"{path} is empty") from None
        if got != header:
            raise SchemaError(f"{path}: expected columns {','.join(header)}, got {','.join(got)}")
        rows = []
        for i, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
            rows.append([c.strip() for c in row])
    if not rows:
        raise EmptyFidelity(f"{path} has no data rows")
    return rows


def _num(path, rows, col, name):
    out = np.empty(len(rows))
    for i, r in enumerate(rows):
        try:
            v = float(r[col])
        except ValueError:
            raise NonFiniteValue(path, i + 1, name, r[col]) from None
        if not math.isfinite(v):
            raise NonFiniteValue(path, i + 1, name, r[col])
        out[i] = v
    return out


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _times(lf_path, lf_rows, hf_path, hf_rows):
    raw = [r[2] for r in lf_rows] + [r[3] for r in hf_rows]
    if all(_is_number(x) for x in raw):
        return _num(lf_path, lf_rows, 2, "t"), _num(hf_path, hf_rows, 3, "t"), None
    stamps = []
    for k, x in enumerate(raw):
        try:
            stamps.append(datetime.fromisoformat(x))
        except ValueError:
            path, row = (lf_path, k + 1) if k < len(lf_rows) else (hf_path, k - len(lf_rows) + 1)
            raise NonFiniteValue(path, row, "t", x) from None
    t0 = min(stamps)
    hours = np.array([(s - t0).total_seconds() / 3600.0 for s in stamps])
    return hours[:len(lf_rows)], hours[len(lf_rows):], t0.isoformat()


def match_nearest(sites: np.ndarray, lf_sites: np.ndarray):
    """Index into ``lf_sites`` of the nearest site; ties to lower (s1, s2)."""
    order = np.lexsort((lf_sites[:, 1], lf_sites[:, 0]))
    cand = lf_sites[order]
    d = np.sqrt(((sites[:, None, :] - cand[None, :, :]) ** 2).sum(axis=2))
    best = np.argmin(d, axis=1)  # first minimum = lowest (s1, s2)
    return order[best], d[np.arange(len(sites)), best]


def ingest(lf_path, hf_path) -> RealDataset:
    lf_rows = _read(lf_path, LF_HEADER)
    hf_rows = _read(hf_path, HF_HEADER)
    t_lf, t_hf, origin = _times(lf_path, lf_rows, hf_path, hf_rows)
    lf = np.column_stack([_num(lf_path, lf_rows, 0, "s1"), _num(lf_path, lf_rows, 1, "s2"), t_lf,
                          _num(lf_path, lf_rows, 3, "y_L")])
    names = list(dict.fromkeys(r[0] for r in hf_rows))
    for i, r in enumerate(hf_rows):
        if r[0] == "":
            raise NonFiniteValue(hf_path, i + 1, "station_id", r[0])
    index = {n: k for k, n in enumerate(names)}
    sid = np.array([index[r[0]] for r in hf_rows], dtype=float)
    hf = np.column_stack([sid, _num(hf_path, hf_rows, 1, "s1"), _num(hf_path, hf_rows, 2, "s2"),
                          t_hf, _num(hf_path, hf_rows, 4, "y_H")])
    sites = np.empty((len(names), 2))
    for k in range(len(names)):
        xy = hf[hf[:, 0] == k, 1:3]
        if np.any(xy != xy[0]):
            raise SchemaError(f"{hf_path}: station {names[k]!r} has varying coordinates")
        sites[k] = xy[0]
    lf_sites = np.unique(lf[:, :2], axis=0)
    idx, dist = match_nearest(sites, lf_sites)
    matching = {k: (float(lf_sites[i, 0]), float(lf_sites[i, 1])) for k, i in enumerate(idx)}
    report = {
        "n_lf": len(lf), "n_hf": len(hf), "n_stations": len(names),
        "duplicates_lf": int(len(lf) - len(np.unique(lf[:, :3], axis=0))),
        "duplicates_hf": int(len(hf) - len(np.unique(hf[:, 1:4], axis=0))),
    }
    ds = RealDataset(lf, hf, names, matching, {k: float(v) for k, v in enumerate(dist)}, report,
                     origin)
    report["hf_rows_without_lf"] = int(np.sum(np.isnan(ds.lf_at_hf())))
    return ds
