"""Gridded daily datasets: CSV ingestion, validation, preprocessing.

File formats (all UTF-8, LF, comma-separated):
  grid file      header ``id,x,y`` with optional ``lon,lat`` columns,
                 one row per grid point, ids 0..D-1 in order.
  variable file  header ``date,id,value``, one row per (day, point),
                 ISO-8601 dates. One file per variable.

A dataset directory written by save_dataset contains grid.csv, one
<name>.csv per variable, and provenance.json. Loading and saving the
same directory twice produces byte-identical files.
"""
from __future__ import annotations

import datetime as _dt
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .spatial import Grid

_FORMAT_VERSION = 1


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v: float) -> str:
    # shortest decimal that round-trips; integers stay integral
    return repr(float(v))


def parse_date(text: str, where: str = "") -> _dt.date:
    try:
        return _dt.date.fromisoformat(text)
    except ValueError:
        raise DataError(f"invalid ISO date {text!r}{where}")


@dataclass
class GriddedDataset:
    grid: Grid
    days: list[str]                     # ISO dates, strictly increasing
    variables: dict[str, np.ndarray]    # name -> (n_days, n_points)
    provenance: list[dict] = field(default_factory=list)

    def __post_init__(self):
        seen = None
        for i, d in enumerate(self.days):
            cur = parse_date(d, f" in day index position {i}")
            if seen is not None and cur <= seen:
                raise DataError(
                    f"day index must be strictly increasing, violated at {d}")
            seen = cur
        t, p = len(self.days), self.grid.n_points
        for name, arr in self.variables.items():
            arr = np.asarray(arr, dtype=float)
            self.variables[name] = arr
            if arr.shape != (t, p):
                raise DataError(
                    f"variable {name!r} has shape {arr.shape}, "
                    f"expected ({t}, {p})")

    @property
    def n_days(self) -> int:
        return len(self.days)

    def day_position(self, date: str) -> int:
        try:
            return self.days.index(date)
        except ValueError:
            raise DataError(f"date {date} not in dataset")

    def dates(self) -> list[_dt.date]:
        return [_dt.date.fromisoformat(d) for d in self.days]

    def subset_days(self, keep: np.ndarray) -> "GriddedDataset":
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        days = [self.days[i] for i in keep]
        variables = {k: v[keep] for k, v in self.variables.items()}
        return GriddedDataset(self.grid, days, variables,
                              list(self.provenance))

    def with_note(self, op: str, **params) -> "GriddedDataset":
        self.provenance.append({"op": op, "params": params})
        return self


def _read_rows(path: str, expected_header: list[str], optional: int = 0):
    """Yield (line_number, fields) after validating the header.

    The first len(expected_header) - optional columns are mandatory.
    """
    with open(path, "r", encoding="utf-8", newline="") as f:
        header = f.readline().rstrip("\n").rstrip("\r")
        cols = header.split(",")
        required = expected_header[:len(expected_header) - optional]
        if cols[:len(required)] != required:
            raise DataError(
                f"{path}: line 1: expected header starting "
                f"{','.join(required)!r}, got {header!r}")
        if len(cols) > len(expected_header) or cols != expected_header[:len(cols)]:
            raise DataError(
                f"{path}: line 1: unrecognized header {header!r}")
        n_cols = len(cols)
        for ln, line in enumerate(f, start=2):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != n_cols:
                raise DataError(
                    f"{path}: line {ln}: expected {n_cols} fields, "
                    f"got {len(fields)}")
            yield ln, fields


def load_grid(path: str) -> Grid:
    ids, xs, ys, lons, lats = [], [], [], [], []
    has_geo = None
    for ln, fields in _read_rows(path, ["id", "x", "y", "lon", "lat"],
                                 optional=2):
        if has_geo is None:
            has_geo = len(fields) == 5
        try:
            ids.append(int(fields[0]))
            xs.append(float(fields[1]))
            ys.append(float(fields[2]))
            if has_geo:
                lons.append(float(fields[3]))
                lats.append(float(fields[4]))
        except ValueError as e:
            raise DataError(f"{path}: line {ln}: {e}")
    if ids != list(range(len(ids))):
        raise DataError(f"{path}: grid ids must be 0..D-1 in order")
    if not ids:
        raise DataError(f"{path}: empty grid")
    if has_geo:
        return Grid(np.array(xs), np.array(ys), np.array(lons), np.array(lats))
    return Grid(np.array(xs), np.array(ys))


def save_grid(grid: Grid, path: str) -> None:
    geo = grid.lon is not None and grid.lat is not None
    lines = ["id,x,y,lon,lat" if geo else "id,x,y"]
    for i in range(grid.n_points):
        row = [str(i), _fmt(grid.x[i]), _fmt(grid.y[i])]
        if geo:
            row += [_fmt(grid.lon[i]), _fmt(grid.lat[i])]
        lines.append(",".join(row))
    _atomic_write(path, "\n".join(lines) + "\n")


def load_variable(path: str, grid: Grid) -> tuple[list[str], np.ndarray]:
    """Read one ``date,id,value`` file into (days, (T, D) array)."""
    d = grid.n_points
    by_day: dict[str, np.ndarray] = {}
    filled: dict[str, np.ndarray] = {}
    for ln, (date, pid, value) in _read_rows(path, ["date", "id", "value"]):
        parse_date(date, f" at {path}: line {ln}")
        try:
            i = int(pid)
            v = float(value)
        except ValueError as e:
            raise DataError(f"{path}: line {ln}: {e}")
        if not 0 <= i < d:
            raise DataError(
                f"{path}: line {ln}: grid id {i} outside 0..{d - 1}")
        if date not in by_day:
            by_day[date] = np.full(d, np.nan)
            filled[date] = np.zeros(d, dtype=bool)
        if filled[date][i]:
            raise DataError(
                f"{path}: line {ln}: duplicate cell (day {date}, id {i})")
        by_day[date][i] = v
        filled[date][i] = True
    if not by_day:
        raise DataError(f"{path}: no data rows")
    days = sorted(by_day)
    for date in days:
        if not filled[date].all():
            missing = int(np.flatnonzero(~filled[date])[0])
            raise DataError(
                f"{path}: missing cell (day {date}, id {missing})")
    return days, np.stack([by_day[d] for d in days])


def save_variable(days: list[str], values: np.ndarray, path: str) -> None:
    out = ["date,id,value"]
    for t, date in enumerate(days):
        row = values[t]
        for i in range(values.shape[1]):
            out.append(f"{date},{i},{_fmt(row[i])}")
    _atomic_write(path, "\n".join(out) + "\n")


def load_dataset(directory: str,
                 variables: list[str] | None = None) -> GriddedDataset:
    """Load a dataset directory written by save_dataset.

    With variables=None the list is taken from provenance.json when
    present, otherwise from the *.csv files next to grid.csv.
    """
    grid = load_grid(os.path.join(directory, "grid.csv"))
    provenance: list[dict] = []
    meta_path = os.path.join(directory, "provenance.json")
    names = variables
    if os.path.exists(meta_path):
        with open(meta_path, "r", encoding="utf-8") as f:
            meta = json.load(f)
        provenance = meta.get("steps", [])
        if names is None:
            names = meta.get("variables")
    if names is None:
        names = sorted(os.path.splitext(p)[0] for p in os.listdir(directory)
                       if p.endswith(".csv") and p != "grid.csv")
    days_ref: list[str] | None = None
    data: dict[str, np.ndarray] = {}
    for name in names:
        days, arr = load_variable(os.path.join(directory, f"{name}.csv"),
                                  grid)
        if days_ref is None:
            days_ref = days
        elif days != days_ref:
            raise DataError(
                f"variable {name!r} covers different days than "
                f"{names[0]!r}")
        data[name] = arr
    if days_ref is None:
        raise DataError(f"{directory}: no variables to load")
    return GriddedDataset(grid, days_ref, data, provenance)


def save_dataset(dataset: GriddedDataset, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    save_grid(dataset.grid, os.path.join(directory, "grid.csv"))
    for name in sorted(dataset.variables):
        save_variable(dataset.days, dataset.variables[name],
                      os.path.join(directory, f"{name}.csv"))
    meta = {"format_version": _FORMAT_VERSION,
            "variables": sorted(dataset.variables),
            "steps": dataset.provenance}
    _atomic_write(os.path.join(directory, "provenance.json"),
                  json.dumps(meta, indent=1, sort_keys=True) + "\n")


# ----------------------------------------------------------------------
# preprocessing operations


def detrend(values: np.ndarray) -> np.ndarray:
    """Remove the per-column least-squares line over the day index."""
    values = np.asarray(values, dtype=float)
    t = len(values)
    if t < 2:
        raise DataError("detrending needs at least two days")
    idx = np.arange(t, dtype=float)
    idx -= idx.mean()
    denom = float(idx @ idx)
    slope = idx @ (values - values.mean(axis=0)) / denom
    return values - values.mean(axis=0) - np.outer(idx, slope)


def day_of_year(dates: list[_dt.date]) -> np.ndarray:
    return np.array([d.timetuple().tm_yday for d in dates])


def standardized_anomalies(values: np.ndarray, dates: list[_dt.date],
                           reference: tuple[int, int], window: int = 31
                           ) -> np.ndarray:
    """Standardize against a day-of-year running climatology.

    For each calendar day the running mean and SD are computed inside
    each reference year over the centered window and then averaged
    across reference years; the anomaly divides the demeaned value by
    that averaged SD.
    """
    values = np.asarray(values, dtype=float)
    if window < 1 or window % 2 == 0:
        raise ConfigError("window must be a positive odd integer")
    lo, hi = reference
    years = np.array([d.year for d in dates])
    in_ref = (years >= lo) & (years <= hi)
    if not in_ref.any():
        raise DataError(
            f"reference period {lo}-{hi} contains no dataset days")
    doy = day_of_year(dates)
    half = window // 2
    out = np.empty_like(values)
    mean_by_doy: dict[int, np.ndarray] = {}
    sd_by_doy: dict[int, np.ndarray] = {}
    ref_years = np.unique(years[in_ref])
    for d in np.unique(doy):
        mus, sds = [], []
        for y in ref_years:
            sel = (years == y) & (np.abs(doy - d) <= half)
            if sel.sum() < 2:
                continue          # year lacks a usable window here
            sample = values[sel]
            mus.append(sample.mean(axis=0))
            sds.append(sample.std(axis=0, ddof=1))
        if not mus:
            raise DataError(
                f"no reference year has a usable window at day of "
                f"year {d}")
        mu = np.mean(mus, axis=0)
        sd = np.mean(sds, axis=0)
        if np.any(sd <= 0):
            bad = int(np.flatnonzero(sd <= 0)[0])
            raise DataError(
                f"zero climatological SD at day of year {d}, "
                f"grid id {bad}")
        mean_by_doy[int(d)] = mu
        sd_by_doy[int(d)] = sd
    for t in range(len(values)):
        out[t] = (values[t] - mean_by_doy[int(doy[t])]) / sd_by_doy[int(doy[t])]
    return out


def rolling_mean(values: np.ndarray, width: int,
                 include_current: bool = False) -> np.ndarray:
    """Trailing mean over the preceding `width` days.

    Default window is strictly preceding (t-width .. t-1), keeping
    predictors causal; include_current=True shifts it to end at t.
    Days without a full window are NaN.
    """
    values = np.asarray(values, dtype=float)
    if width < 1:
        raise ConfigError("width must be at least 1")
    t = len(values)
    out = np.full_like(values, np.nan)
    csum = np.cumsum(values, axis=0)
    # windowed sum ending at row e (inclusive): csum[e] - csum[e-width]
    ends = np.arange(t) if include_current else np.arange(t) - 1
    for pos in range(t):
        e = ends[pos]
        s = e - width + 1
        if s < 0:
            continue
        total = csum[e] - (csum[s - 1] if s > 0 else 0.0)
        out[pos] = total / width
    return out


def season_mask(dates: list[_dt.date], months: tuple[int, ...]) -> np.ndarray:
    return np.array([d.month in months for d in dates])
