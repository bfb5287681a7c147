"""Parse Beiwe-style GPS exports and split traces into local calendar days.

Input CSV header: ``timestamp_ms,latitude,longitude,accuracy_m`` (the
accuracy column, and any value in it, may be omitted).
"""
from __future__ import annotations

import datetime as dt
import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Union

import numpy as np
import pandas as pd

from .errors import EmptyTrace, MalformedHeader

MS_PER_DAY = 86_400_000
MS_PER_BIN = 1_800_000
N_BINS = 48
EPOCH = dt.date(1970, 1, 1)

REQUIRED_COLUMNS = ["timestamp_ms", "latitude", "longitude"]
CANONICAL_COLUMNS = REQUIRED_COLUMNS + ["accuracy_m"]


class Group(str, Enum):
    PRE = "PRE"
    POST = "POST"


@dataclass(frozen=True)
class GpsPoint:
    timestamp_ms: int
    latitude: float
    longitude: float
    accuracy_m: Optional[float] = None

    def __post_init__(self):
        if self.timestamp_ms <= 0:
            raise ValueError("timestamp must be positive")
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")
        if self.accuracy_m is not None and self.accuracy_m < 0:
            raise ValueError("accuracy must be non-negative")


def _points(ts, lat, lon, acc) -> Iterator[GpsPoint]:
    for t, a, o, c in zip(ts, lat, lon, acc):
        yield GpsPoint(int(t), float(a), float(o), None if np.isnan(c) else float(c))


@dataclass(eq=False)
class Trace:
    """One participant's full GPS trace, stored column-wise.

    ``rejected`` counts input rows dropped during parsing.
    """

    participant_id: str
    group: Group
    timestamps: np.ndarray  # int64 ms since epoch, UTC, sorted, unique
    lat: np.ndarray
    lon: np.ndarray
    accuracy: np.ndarray  # NaN where absent
    timezone_offset_minutes: int = 0
    rejected: int = 0

    def __post_init__(self):
        object.__setattr__(self, "group", Group(self.group))

    def __setattr__(self, name, value):
        if name == "group" and "group" in self.__dict__:
            raise AttributeError("group is immutable once set")
        super().__setattr__(name, value)

    def __len__(self):
        return len(self.timestamps)

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.participant_id == other.participant_id
            and self.group == other.group
            and self.timezone_offset_minutes == other.timezone_offset_minutes
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.lat, other.lat)
            and np.array_equal(self.lon, other.lon)
            and np.array_equal(self.accuracy, other.accuracy, equal_nan=True)
        )

    @property
    def points(self) -> list[GpsPoint]:
        return list(_points(self.timestamps, self.lat, self.lon, self.accuracy))

    @classmethod
    def from_points(cls, participant_id, group, points, timezone_offset_minutes=0) -> "Trace":
        pts = list(points)
        if not pts:
            raise EmptyTrace(f"{participant_id}: no points")
        ts = np.array([p.timestamp_ms for p in pts], dtype=np.int64)
        lat = np.array([p.latitude for p in pts], dtype=float)
        lon = np.array([p.longitude for p in pts], dtype=float)
        acc = np.array([np.nan if p.accuracy_m is None else p.accuracy_m for p in pts])
        ts, lat, lon, acc = _sort_and_collapse(ts, lat, lon, acc)
        return cls(participant_id, Group(group), ts, lat, lon, acc, int(timezone_offset_minutes))


@dataclass(eq=False)
class DayTrace:
    participant_id: str
    group: Group
    local_date: dt.date
    timestamps: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    timezone_offset_minutes: int = 0
    coverage_fraction: float = field(default=0.0)

    def __len__(self):
        return len(self.timestamps)

    @property
    def day_start_ms(self) -> int:
        """UTC ms of local midnight that opens this day."""
        local_days = (self.local_date - EPOCH).days
        return local_days * MS_PER_DAY - self.timezone_offset_minutes * 60_000

    @property
    def ms_into_day(self) -> np.ndarray:
        return self.timestamps - self.day_start_ms

    @property
    def bin_index(self) -> np.ndarray:
        return (self.ms_into_day // MS_PER_BIN).astype(np.int64)

    @property
    def points(self) -> list[GpsPoint]:
        return list(_points(self.timestamps, self.lat, self.lon, np.full(len(self), np.nan)))


def _sort_and_collapse(ts, lat, lon, acc):
    order = np.argsort(ts, kind="stable")
    ts, lat, lon, acc = ts[order], lat[order], lon[order], acc[order]
    if len(ts) > 1 and np.any(ts[1:] == ts[:-1]):
        uniq, inverse, counts = np.unique(ts, return_inverse=True, return_counts=True)
        lat = np.bincount(inverse, weights=lat) / counts
        lon = np.bincount(inverse, weights=lon) / counts
        have = ~np.isnan(acc)
        acc_sum = np.bincount(inverse[have], weights=acc[have], minlength=len(uniq))
        acc_n = np.bincount(inverse[have], minlength=len(uniq))
        with np.errstate(invalid="ignore", divide="ignore"):
            acc = np.where(acc_n > 0, acc_sum / np.maximum(acc_n, 1), np.nan)
        ts = uniq
    return ts, lat, lon, acc


def _read_text(raw) -> str:
    if isinstance(raw, (bytes, bytearray)):
        return raw.decode("utf-8-sig")
    if isinstance(raw, str):
        return raw
    data = raw.read()
    return data.decode("utf-8-sig") if isinstance(data, (bytes, bytearray)) else data


def parse_trace(
    raw: Union[bytes, str, io.IOBase],
    participant_id: str,
    group: Union[Group, str],
    timezone_offset_minutes: int = 0,
) -> Trace:
    """Parse a GPS CSV into a sorted, de-duplicated ``Trace``.

    Rows with unparseable values, non-positive or fractional timestamps, or
    out-of-range coordinates are dropped and counted in ``Trace.rejected``.
    Rows sharing a timestamp collapse to their mean coordinate.
    """
    text = _read_text(raw)
    first, _, _ = text.partition("\n")
    header = [c.strip() for c in first.strip("\r").split(",")]
    if header not in (REQUIRED_COLUMNS, CANONICAL_COLUMNS):
        raise MalformedHeader(f"{participant_id}: unexpected header {header!r}")

    df = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False, skip_blank_lines=True)
    n_rows = len(df)
    ts = pd.to_numeric(df["timestamp_ms"], errors="coerce").to_numpy(dtype=float)
    lat = pd.to_numeric(df["latitude"], errors="coerce").to_numpy(dtype=float)
    lon = pd.to_numeric(df["longitude"], errors="coerce").to_numpy(dtype=float)
    if "accuracy_m" in df:
        acc_raw = df["accuracy_m"].str.strip()
        acc = pd.to_numeric(acc_raw.where(acc_raw != ""), errors="coerce").to_numpy(dtype=float)
        bad_acc = (acc_raw != "").to_numpy() & (np.isnan(acc) | (acc < 0))
    else:
        acc = np.full(n_rows, np.nan)
        bad_acc = np.zeros(n_rows, dtype=bool)

    with np.errstate(invalid="ignore"):
        ok = (
            np.isfinite(ts) & (ts > 0) & (ts == np.floor(ts))
            & (lat >= -90.0) & (lat <= 90.0)
            & (lon >= -180.0) & (lon <= 180.0)
            & ~bad_acc
        )
    if not ok.any():
        raise EmptyTrace(f"{participant_id}: zero valid rows")
    # exact for any realistic epoch-ms value (< 2**53)
    ts_i = ts[ok].astype(np.int64)
    out = _sort_and_collapse(ts_i, lat[ok], lon[ok], acc[ok])
    return Trace(
        participant_id, Group(group), *out,
        timezone_offset_minutes=int(timezone_offset_minutes),
        rejected=int(n_rows - ok.sum()),
    )


def format_trace_csv(trace: Trace) -> str:
    """Canonical CSV: integer timestamps, 7-decimal coordinates, LF line ends."""
    acc = ["" if np.isnan(a) else f"{a:.7f}" for a in trace.accuracy.tolist()]
    body = "".join(
        f"{t},{a:.7f},{o:.7f},{c}\n"
        for t, a, o, c in zip(trace.timestamps.tolist(), trace.lat.tolist(), trace.lon.tolist(), acc)
    )
    return "timestamp_ms,latitude,longitude,accuracy_m\n" + body


def segment_days(trace: Trace) -> list[DayTrace]:
    """Split a trace into local calendar days, half-open [00:00, 24:00)."""
    if len(trace) == 0:
        raise EmptyTrace(f"{trace.participant_id}: empty trace")
    local_ms = trace.timestamps + trace.timezone_offset_minutes * 60_000
    day_idx = local_ms // MS_PER_DAY
    # timestamps are sorted, so each day is one contiguous run
    starts = np.flatnonzero(np.r_[True, day_idx[1:] != day_idx[:-1]])
    ends = np.r_[starts[1:], len(day_idx)]
    days = []
    for s, e in zip(starts, ends):
        d = int(day_idx[s])
        bins = (local_ms[s:e] - d * MS_PER_DAY) // MS_PER_BIN
        days.append(DayTrace(
            participant_id=trace.participant_id,
            group=trace.group,
            local_date=EPOCH + dt.timedelta(days=d),
            timestamps=trace.timestamps[s:e],
            lat=trace.lat[s:e],
            lon=trace.lon[s:e],
            timezone_offset_minutes=trace.timezone_offset_minutes,
            coverage_fraction=len(np.unique(bins)) / N_BINS,
        ))
    return days
