"""File formats: data CSV, fits CSV, exclusion reports and small helpers.

Data CSV (long format, UTF-8, LF)::

    site_id,lon,lat,time_index,value

with ``time_index`` running 0..T-1 at every site.  All floats are written
with 17 significant digits so a load/write cycle is byte-stable.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .link import TransformedParameters
from .maxstep import ExclusionReport, SiteFit, SiteSeries

DATA_HEADER = ["site_id", "lon", "lat", "time_index", "value"]
FITS_HEADER = [
    "site_id", "lon", "lat", "threshold", "n_exceedances", "psi_hat", "tau_hat", "phi_hat",
    "q11", "q12", "q13", "q22", "q23", "q33",
]
EXCLUSION_HEADER = ["site_id", "lon", "lat", "reason"]


def fmt(x) -> str:
    return format(float(x), ".17g")


@dataclass
class Dataset:
    """``N`` sites with coordinates and an ``N x T`` matrix of observations."""

    site_ids: np.ndarray
    lon: np.ndarray
    lat: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.site_ids = np.asarray(self.site_ids, dtype=np.int64)
        self.lon = np.asarray(self.lon, dtype=float)
        self.lat = np.asarray(self.lat, dtype=float)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        n = self.site_ids.size
        if n == 0:
            raise InvalidInputError("dataset has no sites")
        if self.lon.shape != (n,) or self.lat.shape != (n,) or self.values.shape[0] != n:
            raise InvalidInputError("inconsistent dataset dimensions")
        if np.unique(self.site_ids).size != n:
            raise InvalidInputError("site ids must be unique")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("values must be finite")

    @property
    def n_sites(self) -> int:
        return int(self.site_ids.size)

    @property
    def n_times(self) -> int:
        return int(self.values.shape[1])

    @property
    def coords(self) -> np.ndarray:
        return np.column_stack([self.lon, self.lat])

    def iter_series(self):
        for k in range(self.n_sites):
            yield SiteSeries(int(self.site_ids[k]), float(self.lon[k]), float(self.lat[k]), self.values[k])

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.site_ids[index], self.lon[index], self.lat[index], self.values[index])


def load_dataset(path) -> Dataset:
    """Read and validate a data CSV; errors cite the offending line."""
    rows = {}
    coords = {}
    order = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError(f"{path}: empty file") from None
        if header != DATA_HEADER:
            raise InvalidInputError(f"{path}:1: expected header {','.join(DATA_HEADER)}")
        for rec in reader:
            line = reader.line_num
            if not rec:
                continue
            if len(rec) != 5:
                raise InvalidInputError(f"{path}:{line}: expected 5 fields, got {len(rec)}")
            try:
                sid = int(rec[0])
                lon, lat = float(rec[1]), float(rec[2])
                t = int(rec[3])
                v = float(rec[4])
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{line}: parse error ({exc})") from None
            if not (math.isfinite(lon) and math.isfinite(lat)):
                raise InvalidInputError(f"{path}:{line}: non-finite coordinates")
            if not math.isfinite(v):
                raise InvalidInputError(f"{path}:{line}: non-finite value")
            if v < 0:
                raise InvalidInputError(f"{path}:{line}: negative value {rec[4]}")
            if t < 0:
                raise InvalidInputError(f"{path}:{line}: negative time_index")
            if sid not in rows:
                rows[sid] = {}
                coords[sid] = (lon, lat)
                order.append(sid)
            elif coords[sid] != (lon, lat):
                raise InvalidInputError(f"{path}:{line}: coordinates of site {sid} changed")
            if t in rows[sid]:
                raise InvalidInputError(f"{path}:{line}: duplicate (site_id, time_index) = ({sid}, {t})")
            rows[sid][t] = v
    if not order:
        raise InvalidInputError(f"{path}: no data rows")
    T = len(rows[order[0]])
    values = np.empty((len(order), T))
    for k, sid in enumerate(order):
        series = rows[sid]
        if len(series) != T:
            raise InvalidInputError(f"{path}: site {sid} has {len(series)} values, expected {T}")
        if set(series) != set(range(T)):
            raise InvalidInputError(f"{path}: site {sid} time_index is not 0..{T - 1}")
        values[k] = [series[t] for t in range(T)]
    return Dataset(
        np.array(order),
        np.array([coords[s][0] for s in order]),
        np.array([coords[s][1] for s in order]),
        values,
    )


def write_dataset(ds: Dataset, path) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(DATA_HEADER) + "\n")
        for k in range(ds.n_sites):
            prefix = f"{int(ds.site_ids[k])},{fmt(ds.lon[k])},{fmt(ds.lat[k])},"
            fh.writelines(f"{prefix}{t},{fmt(v)}\n" for t, v in enumerate(ds.values[k]))


def write_fits(fits, path) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(FITS_HEADER) + "\n")
        for f in fits:
            Q = f.info
            vals = [f.lon, f.lat, f.threshold]
            cells = [str(f.site_id)] + [fmt(v) for v in vals] + [str(f.n_exceedances)]
            cells += [fmt(v) for v in f.eta_hat.as_array()]
            cells += [fmt(Q[i, j]) for i, j in ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))]
            fh.write(",".join(cells) + "\n")


def load_fits(path, n_block: float = 1.0) -> list:
    fits = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != FITS_HEADER:
            raise InvalidInputError(f"{path}: unexpected fits header")
        for rec in reader:
            try:
                q = [float(rec[k]) for k in ("q11", "q12", "q13", "q22", "q23", "q33")]
                Q = np.array([[q[0], q[1], q[2]], [q[1], q[3], q[4]], [q[2], q[4], q[5]]])
                fits.append(
                    SiteFit(
                        site_id=int(rec["site_id"]),
                        eta_hat=TransformedParameters(
                            float(rec["psi_hat"]), float(rec["tau_hat"]), float(rec["phi_hat"])
                        ),
                        info=Q,
                        n_exceedances=int(rec["n_exceedances"]),
                        threshold=float(rec["threshold"]),
                        lon=float(rec["lon"]),
                        lat=float(rec["lat"]),
                        n_block=n_block,
                    )
                )
            except (ValueError, TypeError) as exc:
                raise InvalidInputError(f"{path}:{reader.line_num}: {exc}") from None
    if not fits:
        raise InvalidInputError(f"{path}: no fits")
    return fits


def exclusions_path(fits_path) -> Path:
    p = Path(fits_path)
    return p.with_name(p.stem + ".exclusions.csv")


def write_exclusions(report: ExclusionReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EXCLUSION_HEADER)
        for sid, lon, lat, reason in report.excluded:
            w.writerow([sid, fmt(lon), fmt(lat), reason])


def load_exclusions(path) -> ExclusionReport:
    report = ExclusionReport()
    p = Path(path)
    if not p.exists():
        return report
    with open(p, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            report.excluded.append((int(rec["site_id"]), float(rec["lon"]), float(rec["lat"]), rec["reason"]))
    return report


def dump_json(obj, path) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False, allow_nan=True)
        fh.write("\n")
