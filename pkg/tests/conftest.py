import datetime as dt

import numpy as np
import pytest

from mobpheno.ingest import MS_PER_DAY, DayTrace, Trace

DAY0 = dt.date(2020, 2, 3)
DAY0_MS = (DAY0 - dt.date(1970, 1, 1)).days * MS_PER_DAY


def make_trace(minutes, lat, lon, pid="p01", group="PRE", tz=0, day0_ms=DAY0_MS):
    """Trace with timestamps given as minutes after local midnight of DAY0."""
    ts = day0_ms - tz * 60_000 + np.round(np.asarray(minutes, dtype=float) * 60_000).astype(np.int64)
    lat = np.broadcast_to(np.asarray(lat, dtype=float), ts.shape).copy()
    lon = np.broadcast_to(np.asarray(lon, dtype=float), ts.shape).copy()
    return Trace(pid, group, ts, lat, lon, np.full(len(ts), np.nan), tz)


def make_day(minutes, lat, lon, pid="p01", group="PRE", tz=0, date=DAY0):
    t = make_trace(minutes, lat, lon, pid, group, tz,
                   day0_ms=(date - dt.date(1970, 1, 1)).days * MS_PER_DAY)
    bins = np.unique(np.asarray(minutes) // 30)
    return DayTrace(pid, t.group, date, t.timestamps, t.lat, t.lon, tz, len(bins) / 48)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
