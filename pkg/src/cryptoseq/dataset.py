"""Date-indexed frames, CSV ingestion, splitting and lookback windowing.

CSV layout (one file per source)::

    date,<column>,<column>,...
    2019-01-01,3843.52,,0.81

ISO-8601 dates, decimal reals, an empty cell is a missing value.  Missing
values are held as NaN inside a frame.
"""
from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import LeadingGapError, SchemaError, WarmupError
from .numerics import RandomStream

DAY = np.timedelta64(1, "D")


class EmptySplitError(ValueError):
    """A configured date range selected no rows."""


def _as_dates(values) -> np.ndarray:
    return np.asarray(values, dtype="datetime64[D]")


def _as_date(value) -> np.datetime64:
    return np.datetime64(value, "D")


@dataclass(frozen=True)
class TimeSeriesFrame:
    """Named float columns sharing one strictly increasing daily date axis."""
    dates: np.ndarray
    columns: dict

    def __post_init__(self):
        dates = _as_dates(self.dates).copy()
        if dates.ndim != 1:
            raise SchemaError("dates must be one-dimensional")
        if len(dates) > 1 and not np.all(dates[1:] > dates[:-1]):
            raise SchemaError("dates must be strictly increasing")
        dates.setflags(write=False)
        cols = {}
        for name, values in self.columns.items():
            arr = np.array(values, dtype=np.float64)
            if arr.shape != dates.shape:
                raise SchemaError(f"column {name!r} has {arr.size} values for {dates.size} dates")
            arr.setflags(write=False)
            cols[str(name)] = arr
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "columns", cols)

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise SchemaError(f"no column {name!r}; have {self.names}") from None

    def matrix(self, names: Optional[Sequence[str]] = None) -> np.ndarray:
        names = self.names if names is None else list(names)
        if not names:
            return np.empty((len(self), 0))
        return np.column_stack([self.column(n) for n in names])

    def select(self, names: Iterable[str]) -> "TimeSeriesFrame":
        return TimeSeriesFrame(self.dates, {n: self.column(n) for n in names})

    def drop(self, names: Iterable[str]) -> "TimeSeriesFrame":
        gone = set(names)
        return TimeSeriesFrame(self.dates, {n: v for n, v in self.columns.items() if n not in gone})

    def assign(self, **new_columns) -> "TimeSeriesFrame":
        cols = dict(self.columns)
        cols.update(new_columns)
        return TimeSeriesFrame(self.dates, cols)

    def take(self, rows) -> "TimeSeriesFrame":
        return TimeSeriesFrame(self.dates[rows], {n: v[rows] for n, v in self.columns.items()})

    def between(self, start, end) -> "TimeSeriesFrame":
        """Rows with ``start <= date <= end``."""
        keep = (self.dates >= _as_date(start)) & (self.dates <= _as_date(end))
        return self.take(keep)

    def is_contiguous(self) -> bool:
        return len(self) < 2 or bool(np.all(np.diff(self.dates) == DAY))

    def has_missing(self, names: Optional[Sequence[str]] = None) -> bool:
        m = self.matrix(names)
        return bool(np.isnan(m).any())

    def equals(self, other: "TimeSeriesFrame") -> bool:
        if self.names != other.names or not np.array_equal(self.dates, other.dates):
            return False
        return all(np.array_equal(self.columns[n], other.columns[n], equal_nan=True) for n in self.names)


# --- CSV ---------------------------------------------------------------------

def read_csv(path) -> TimeSeriesFrame:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if not header or header[0].strip().lower() != "date":
            raise SchemaError(f"{path}: first header cell must be 'date'")
        names = [h.strip() for h in header[1:]]
        if len(set(names)) != len(names):
            raise SchemaError(f"{path}: duplicate column names")
        dates, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            try:
                dates.append(dt.date.fromisoformat(row[0].strip()))
                rows.append([float(c) if c.strip() else math.nan for c in row[1:]])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    try:
        return TimeSeriesFrame(dates, {n: values[:, i] for i, n in enumerate(names)})
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from None


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def write_csv(frame: TimeSeriesFrame, path) -> None:
    """Write with round-trip float formatting so re-reads are exact."""
    cols = [frame.columns[n] for n in frame.names]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *frame.names])
        for i, d in enumerate(frame.dates):
            w.writerow([str(d), *(_fmt(c[i]) for c in cols)])


def load_directory(data_dir) -> TimeSeriesFrame:
    """Read every ``*.csv`` in ``data_dir`` (name order) and merge them."""
    paths = sorted(Path(data_dir).glob("*.csv"))
    if not paths:
        raise FileNotFoundError(f"no CSV files in {data_dir}")
    return merge_frames([read_csv(p) for p in paths])


# --- merge / fill ------------------------------------------------------------

def merge_frames(frames: Sequence[TimeSeriesFrame]) -> TimeSeriesFrame:
    """Outer join on the union of dates; absent cells become NaN."""
    if not frames:
        raise ValueError("nothing to merge")
    seen: set[str] = set()
    for f in frames:
        dup = seen.intersection(f.names)
        if dup:
            raise SchemaError(f"duplicate column names across frames: {sorted(dup)}")
        seen.update(f.names)
    if len(frames) == 1:
        return frames[0]
    dates = np.unique(np.concatenate([f.dates for f in frames]))
    cols = {}
    for f in frames:
        pos = np.searchsorted(dates, f.dates)
        for name, values in f.columns.items():
            out = np.full(len(dates), np.nan)
            out[pos] = values
            cols[name] = out
    return TimeSeriesFrame(dates, cols)


def reindex_daily(frame: TimeSeriesFrame) -> TimeSeriesFrame:
    """Insert every missing calendar day between the first and last date."""
    if frame.is_contiguous():
        return frame
    dates = np.arange(frame.dates[0], frame.dates[-1] + DAY, DAY)
    pos = ((frame.dates - dates[0]) // DAY).astype(np.int64)
    cols = {}
    for name, values in frame.columns.items():
        out = np.full(len(dates), np.nan)
        out[pos] = values
        cols[name] = out
    return TimeSeriesFrame(dates, cols)


def forward_fill(frame: TimeSeriesFrame, columns: Optional[Sequence[str]] = None) -> TimeSeriesFrame:
    """Fill each missing cell with the latest earlier value in its column.

    Weekend gaps in market series thereby carry Friday's value.
    """
    names = frame.names if columns is None else list(columns)
    cols = dict(frame.columns)
    for name in names:
        values = frame.column(name)
        missing = np.isnan(values)
        if not missing.any():
            continue
        if missing[0]:
            raise LeadingGapError(
                f"column {name!r} has no value on its first date {frame.dates[0]}; nothing to fill from")
        idx = np.where(missing, 0, np.arange(len(values)))
        np.maximum.accumulate(idx, out=idx)
        cols[name] = values[idx]
    return TimeSeriesFrame(frame.dates, cols)


def concat_frames(frames: Sequence[TimeSeriesFrame]) -> TimeSeriesFrame:
    names = frames[0].names
    for f in frames[1:]:
        if f.names != names:
            raise SchemaError("frames to concatenate must share columns")
    return TimeSeriesFrame(
        np.concatenate([f.dates for f in frames]),
        {n: np.concatenate([f.columns[n] for f in frames]) for n in names},
    )


# --- splitting ---------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train_start: dt.date = dt.date(2010, 1, 1)
    train_end: dt.date = dt.date(2018, 6, 30)
    val_start: dt.date = dt.date(2018, 7, 1)
    val_end: dt.date = dt.date(2018, 12, 31)
    test_start: dt.date = dt.date(2019, 1, 1)
    test_end: dt.date = dt.date(2019, 6, 30)

    def __post_init__(self):
        bounds = [self.train_start, self.train_end, self.val_start,
                  self.val_end, self.test_start, self.test_end]
        for i in range(0, 6, 2):
            if bounds[i] > bounds[i + 1]:
                raise ValueError(f"split range {bounds[i]}..{bounds[i + 1]} is reversed")
        if not (self.train_end < self.val_start and self.val_end < self.test_start):
            raise ValueError("split ranges must be disjoint and ordered train < validation < test")

    def ranges(self):
        return [("train", self.train_start, self.train_end),
                ("validation", self.val_start, self.val_end),
                ("test", self.test_start, self.test_end)]


def split(frame: TimeSeriesFrame, spec: SplitSpec = SplitSpec()):
    """Partition rows into (train, validation, test) by date."""
    parts = []
    for name, start, end in spec.ranges():
        part = frame.between(start, end)
        if len(part) == 0:
            raise EmptySplitError(f"{name} range {start}..{end} selects no rows")
        parts.append(part)
    return tuple(parts)


# --- windowing ---------------------------------------------------------------

@dataclass
class WindowedDataset:
    """Supervised samples: ``windows[i]`` (lookback x features) -> ``targets[i]``."""
    windows: np.ndarray
    targets: np.ndarray
    target_dates: np.ndarray
    feature_names: tuple
    target_column: str

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.target_dates = _as_dates(self.target_dates)
        n = len(self.targets)
        if self.windows.ndim != 3 or self.windows.shape[0] != n or len(self.target_dates) != n:
            raise SchemaError("windows, targets and dates must have matching lengths")
        if self.windows.shape[2] != len(self.feature_names):
            raise SchemaError("feature_names does not match the window width")

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def lookback(self) -> int:
        return self.windows.shape[1]

    @property
    def width(self) -> int:
        return self.windows.shape[2]

    @property
    def previous_target(self) -> np.ndarray:
        """Target column on the day before each target date (persistence forecast)."""
        j = list(self.feature_names).index(self.target_column)
        return self.windows[:, -1, j]

    def take(self, idx) -> "WindowedDataset":
        return WindowedDataset(self.windows[idx], self.targets[idx], self.target_dates[idx],
                               self.feature_names, self.target_column)


def make_windows(frame: TimeSeriesFrame, lookback: int, target_column: str,
                 context: Optional[TimeSeriesFrame] = None) -> WindowedDataset:
    """One sample per date of ``frame`` that has ``lookback`` prior days.

    The window for target date ``t`` holds rows ``t-lookback .. t-1`` of every
    column.  ``context`` supplies rows immediately preceding ``frame`` (for
    example the validation split ahead of the test split) so that early
    targets still get full windows; only its last ``lookback`` rows are used.
    """
    if lookback < 1:
        raise ValueError("lookback must be at least 1")
    frame.column(target_column)
    names = frame.names
    n_ctx = 0
    full = frame
    if context is not None:
        if context.names != names:
            raise SchemaError("context must have the same columns as the frame")
        if len(context) < lookback:
            raise WarmupError(
                f"context has {len(context)} rows; {lookback - len(context)} more needed for lookback {lookback}")
        ctx = context.take(slice(len(context) - lookback, None))
        if len(frame) and ctx.dates[-1] + DAY != frame.dates[0]:
            raise SchemaError(
                f"context ends {ctx.dates[-1]} but frame starts {frame.dates[0]}; they must be adjacent")
        n_ctx = lookback
        full = concat_frames([ctx, frame])
    elif len(frame) <= lookback:
        raise WarmupError(
            f"{len(frame)} rows cannot fill a {lookback}-day window plus a target; "
            f"{lookback + 1 - len(frame)} more rows (or a context frame) needed")
    if not full.is_contiguous():
        raise SchemaError("windowing needs consecutive calendar days; reindex and fill first")
    values = full.matrix(names)
    if np.isnan(values).any():
        raise SchemaError("frame has missing values; forward-fill before windowing")
    first = lookback if context is None else n_ctx
    idx = np.arange(first, len(full))
    view = np.lib.stride_tricks.sliding_window_view(values, lookback, axis=0)  # (N-L+1, F, L)
    windows = view[idx - lookback].transpose(0, 2, 1).copy()
    targets = values[idx, names.index(target_column)]
    return WindowedDataset(windows, targets, full.dates[idx], tuple(names), target_column)


# --- synthetic data ----------------------------------------------------------

SYNTH_END = dt.date(2019, 6, 30)
SYNTH_AR = 0.98
SYNTH_LOG_LEVEL = math.log(5000.0)
SYNTH_LOG_SIGMA = 0.04
SYNTH_SCALE = 1000.0
# (weight on next-day price, noise std in units of SYNTH_SCALE) for cov_1..cov_4;
# later covariates are pure noise
SYNTH_COVARIATES = ((1.0, 0.05), (0.5, 0.5), (-0.25, 1.0), (0.0, 1.0))


def synth_generate(seed: int, days: int, features: int) -> TimeSeriesFrame:
    """Seeded synthetic market with a planted next-day signal.

    Ground truth:

    * ``log p_t = 0.98 * log p_{t-1} + 0.02 * log(5000) + 0.04 * e_t`` with
      ``e_t ~ N(0, 1)``, so the price is positive and mean-reverting around
      roughly 5000 (the constant is the upward drift term);
    * ``cov_j[t] = w_j * p[t+1] + 1000 * s_j * u_jt`` with ``(w_j, s_j)`` from
      ``SYNTH_COVARIATES`` and pure noise (``w_j = 0``, ``s_j = 1``) beyond it.

    Dates run daily and end on 2019-06-30 so the default split applies.
    Columns are ``price, cov_1 .. cov_<features>``.
    """
    if days < 100:
        raise ValueError("synthetic series needs at least 100 days")
    if features < 0:
        raise ValueError("features must be non-negative")
    rng = RandomStream(seed)
    shocks = rng.normal(days + 1)
    drive = (1.0 - SYNTH_AR) * SYNTH_LOG_LEVEL + SYNTH_LOG_SIGMA * shocks
    log_p, _ = lfilter([1.0], [1.0, -SYNTH_AR], drive, zi=[SYNTH_AR * SYNTH_LOG_LEVEL])
    price = np.exp(log_p)
    cols = {"price": price[:days]}
    for j in range(features):
        weight, noise = SYNTH_COVARIATES[j] if j < len(SYNTH_COVARIATES) else (0.0, 1.0)
        cols[f"cov_{j + 1}"] = weight * price[1:] + SYNTH_SCALE * noise * rng.normal(days)
    end = np.datetime64(SYNTH_END, "D")
    dates = np.arange(end - (days - 1) * DAY, end + DAY, DAY)
    return TimeSeriesFrame(dates, cols)
