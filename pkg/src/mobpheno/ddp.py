"""Daily Displacement Profiles.

A day's points are averaged into 48 half-hour bins, empty bins take the
coordinate of the most recent observed bin, and the profile is the vector
of 47 great-circle distances between consecutive bins.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import AllBinsAbsent, InsufficientCoverage
from .geo import haversine
from .ingest import N_BINS, DayTrace, Group

N_DISPLACEMENTS = N_BINS - 1
DEFAULT_MIN_COVERAGE = 0.5


def bin_label(i: int) -> str:
    """Half-hour bin label: bin 12 -> 'H06a' (6:00-6:30), bin 41 -> 'H20b'."""
    if not 0 <= i < N_BINS:
        raise IndexError(i)
    return f"H{i // 2:02d}{'ab'[i % 2]}"


BIN_LABELS = [bin_label(i) for i in range(N_BINS)]
# displacement i is movement into bin i+1, so it carries that bin's label
DISPLACEMENT_LABELS = BIN_LABELS[1:]
DDP_COLUMNS = [f"d{i:02d}" for i in range(N_DISPLACEMENTS)]


@dataclass(eq=False)
class BinnedDay:
    participant_id: str
    local_date: dt.date
    lat: np.ndarray  # 48 entries, NaN = ABSENT
    lon: np.ndarray
    observed_mask: np.ndarray  # 48 bools
    group: Group = Group.PRE

    @property
    def absent(self) -> np.ndarray:
        return np.isnan(self.lat)


@dataclass(eq=False)
class DisplacementProfile:
    participant_id: str
    local_date: dt.date
    group: Group
    d: np.ndarray  # 47 non-negative meters

    def __post_init__(self):
        if self.d.shape != (N_DISPLACEMENTS,):
            raise ValueError(f"profile must have {N_DISPLACEMENTS} values, got {self.d.shape}")


def bin_day(day: DayTrace) -> BinnedDay:
    idx = day.bin_index
    counts = np.bincount(idx, minlength=N_BINS)
    observed = counts > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        lat = np.bincount(idx, weights=day.lat, minlength=N_BINS) / counts
        lon = np.bincount(idx, weights=day.lon, minlength=N_BINS) / counts
    lat[~observed] = np.nan
    lon[~observed] = np.nan
    return BinnedDay(day.participant_id, day.local_date, lat, lon, observed, day.group)


def impute_bins(binned: BinnedDay) -> BinnedDay:
    """Carry the last observed coordinate forward through empty bins.

    Empty bins before the first observation take the first observed coordinate.
    """
    present = ~binned.absent
    if not present.any():
        raise AllBinsAbsent(f"{binned.participant_id} {binned.local_date}: no observed bins")
    src = np.where(present, np.arange(N_BINS), -1)
    np.maximum.accumulate(src, out=src)
    src[src < 0] = np.flatnonzero(present)[0]
    return BinnedDay(
        binned.participant_id, binned.local_date,
        binned.lat[src], binned.lon[src],
        binned.observed_mask.copy(), binned.group,
    )


def displacements(filled: BinnedDay) -> np.ndarray:
    return haversine(filled.lat[:-1], filled.lon[:-1], filled.lat[1:], filled.lon[1:])


def build_ddp(day: DayTrace, min_coverage: float = DEFAULT_MIN_COVERAGE) -> DisplacementProfile:
    if day.coverage_fraction < min_coverage:
        raise InsufficientCoverage(
            f"{day.participant_id} {day.local_date}: coverage "
            f"{day.coverage_fraction:.3f} < {min_coverage}"
        )
    filled = impute_bins(bin_day(day))
    return DisplacementProfile(day.participant_id, day.local_date, day.group, displacements(filled))


def profiles_matrix(profiles) -> np.ndarray:
    if not profiles:
        return np.empty((0, N_DISPLACEMENTS))
    return np.vstack([p.d for p in profiles])


def ddp_table(profiles) -> pd.DataFrame:
    """DDP export frame: participant_id, local_date, group, d00..d46."""
    meta = pd.DataFrame({
        "participant_id": [p.participant_id for p in profiles],
        "local_date": [p.local_date.isoformat() for p in profiles],
        "group": [Group(p.group).value for p in profiles],
    })
    values = pd.DataFrame(profiles_matrix(profiles), columns=DDP_COLUMNS)
    return pd.concat([meta, values], axis=1)


def profiles_from_table(df: pd.DataFrame) -> list[DisplacementProfile]:
    mat = df[DDP_COLUMNS].to_numpy(dtype=float)
    return [
        DisplacementProfile(
            str(pid), dt.date.fromisoformat(str(date)), Group(grp), mat[i].copy()
        )
        for i, (pid, date, grp) in enumerate(
            zip(df["participant_id"], df["local_date"], df["group"])
        )
    ]


def ddp_heatmap_table(profiles) -> pd.DataFrame:
    """Long-format plot table with cell value ln(1 + displacement_m)."""
    n = len(profiles)
    return pd.DataFrame({
        "participant_id": np.repeat([p.participant_id for p in profiles], N_DISPLACEMENTS),
        "local_date": np.repeat([p.local_date.isoformat() for p in profiles], N_DISPLACEMENTS),
        "bin": np.tile(DISPLACEMENT_LABELS, n),
        "log_displacement": np.log1p(profiles_matrix(profiles)).ravel(),
    })
