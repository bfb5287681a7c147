"""Nonparametric rest-activity metrics computed on displacement profiles.

Profiles are passed as a (days x bins) array of displacement magnitudes.
IS and IV use the 47 raw displacement bins. M10 and L5 scan the mean
profile with non-wrapping windows of 20 and 10 half-hour bins.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DegenerateVariance, InsufficientDays, ZeroDenominator
from .ingest import Group

M10_BINS = 20
L5_BINS = 10
METRIC_COLUMNS = ["IS", "IV", "M10", "L5", "RA"]


@dataclass
class CircadianMetrics:
    participant_id: str
    group: Group
    IS: float
    IV: float
    M10: float
    L5: float
    RA: float
    n_days: int


def _as_days(profiles) -> np.ndarray:
    x = np.asarray(profiles, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    return x


def pad_midnight(profiles) -> np.ndarray:
    """Prepend a zero displacement for the first bin, giving 48 columns."""
    x = _as_days(profiles)
    return np.hstack([np.zeros((x.shape[0], 1)), x])


def interdaily_stability(profiles) -> float:
    x = _as_days(profiles)
    if x.shape[0] < 2:
        raise InsufficientDays("IS needs at least 2 days")
    grand = x.mean()
    total = np.mean((x - grand) ** 2)
    if not total > 0:
        raise DegenerateVariance("all displacement values are equal")
    hourly = x.mean(axis=0)
    return float(np.mean((hourly - grand) ** 2) / total)


def daily_intradaily_variability(profile) -> float:
    """IV of one day's series: n * sum(diff^2) / ((n - 1) * sum((x - mean)^2))."""
    x = np.asarray(profile, dtype=float)
    n = x.size
    dev = np.sum((x - x.mean()) ** 2)
    if n < 2 or not dev > 0:
        raise DegenerateVariance("day has no within-day variation")
    return float(n * np.sum(np.diff(x) ** 2) / ((n - 1) * dev))


def daily_iv_values(profiles) -> np.ndarray:
    """Per-day IV; NaN for days without within-day variation."""
    x = _as_days(profiles)
    n = x.shape[1]
    dev = np.sum((x - x.mean(axis=1, keepdims=True)) ** 2, axis=1)
    num = n * np.sum(np.diff(x, axis=1) ** 2, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(dev > 0, num / ((n - 1) * dev), np.nan)


def intradaily_variability(profiles) -> float:
    """Mean of the per-day IV values, skipping days without variation."""
    iv = daily_iv_values(profiles)
    if np.all(np.isnan(iv)):
        raise DegenerateVariance("no day has within-day variation")
    return float(np.nanmean(iv))


def _window_means(profile: np.ndarray, width: int) -> np.ndarray:
    c = np.concatenate([[0.0], np.cumsum(profile)])
    return (c[width:] - c[:-width]) / width


def m10_l5(profiles, pad: bool = False) -> tuple[float, float]:
    """(M10, L5) of the mean daily profile; windows do not wrap past midnight."""
    x = _as_days(profiles)
    if x.shape[0] < 1 or x.size == 0:
        raise InsufficientDays("M10/L5 need at least 1 day")
    if pad:
        x = pad_midnight(x)
    mean_profile = x.mean(axis=0)
    return (
        float(_window_means(mean_profile, M10_BINS).max()),
        float(_window_means(mean_profile, L5_BINS).min()),
    )


def relative_amplitude(m10: float, l5: float) -> float:
    denom = m10 + l5
    if denom == 0:
        raise ZeroDenominator("M10 + L5 == 0")
    return (m10 - l5) / denom


def _safe(fn, *args, **kw) -> float:
    try:
        return fn(*args, **kw)
    except (DegenerateVariance, InsufficientDays, ZeroDenominator):
        return float("nan")


def participant_metrics(participant_id, group, profiles, pad: bool = False) -> CircadianMetrics:
    """All five metrics for one participant; undefined ones become NaN."""
    x = _as_days(profiles)
    m10, l5 = m10_l5(x, pad=pad)
    return CircadianMetrics(
        participant_id=participant_id,
        group=Group(group),
        IS=_safe(interdaily_stability, x),
        IV=_safe(intradaily_variability, x),
        M10=m10,
        L5=l5,
        RA=_safe(relative_amplitude, m10, l5),
        n_days=x.shape[0],
    )


def daily_metrics(profiles, pad: bool = False) -> pd.DataFrame:
    """Per-day IV, M10, L5 and RA (each day scored on its own profile)."""
    x = _as_days(profiles)
    xs = pad_midnight(x) if pad else x
    m10 = np.array([_window_means(r, M10_BINS).max() for r in xs])
    l5 = np.array([_window_means(r, L5_BINS).min() for r in xs])
    denom = m10 + l5
    with np.errstate(invalid="ignore", divide="ignore"):
        ra = np.where(denom > 0, (m10 - l5) / denom, np.nan)
    return pd.DataFrame({"IV": daily_iv_values(x), "M10": m10, "L5": l5, "RA": ra})


def metrics_table(metrics) -> pd.DataFrame:
    return pd.DataFrame([{
        "participant_id": m.participant_id,
        "group": Group(m.group).value,
        "IS": m.IS, "IV": m.IV, "M10": m.M10, "L5": m.L5, "RA": m.RA,
        "n_days": m.n_days,
    } for m in metrics], columns=["participant_id", "group", *METRIC_COLUMNS, "n_days"])
