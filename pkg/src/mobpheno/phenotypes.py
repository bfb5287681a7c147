"""Daily GPS phenotypes: loc.var, num.pls, ent.pls, perc.home, total.dist,
max.dist and routine.idx.

Significant places come from a time-ordered stay scan over the whole study
period (a running centroid that closes when a point leaves ``d_thresh``;
stays shorter than ``t_thresh`` are dropped), followed by merging stays
whose centroids fall within ``merge_distance``.
"""
from __future__ import annotations

import datetime as dt
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from scipy.spatial import ConvexHull, QhullError

from .ddp import DisplacementProfile, bin_day, displacements, impute_bins
from .errors import (
    HomeUndefined, InsufficientCoverage, SingleDay, TooFewPoints, DataError,
)
from .geo import haversine, project_local
from .ingest import MS_PER_DAY, N_BINS, DayTrace, Group, Trace, segment_days

FEATURE_COLUMNS = [
    "loc.var", "num.pls", "ent.pls", "perc.home", "total.dist", "max.dist", "routine.idx",
]
OVERNIGHT_MS = 6 * 3_600_000
MOVING = -1
UNKNOWN = -2
EXACT_MAX_DIST_LIMIT = 5000


@dataclass
class PhenotypeConfig:
    d_thresh: float = 200.0
    t_thresh: float = 600.0
    merge_distance: float = 200.0
    min_coverage: float = 0.5
    loc_var_units: str = "m"  # "m" or "deg"


@dataclass
class PlaceCluster:
    cluster_id: int
    centroid: tuple[float, float]
    total_dwell_s: float
    overnight_dwell_s: float
    visits: list[tuple[int, int]] = field(default_factory=list)
    n_points: int = 0


@dataclass
class DailyPhenotypes:
    participant_id: str
    local_date: dt.date
    group: Group
    loc_var: float
    num_pls: int
    ent_pls: float
    perc_home: float
    total_dist: float
    max_dist: float
    routine_idx: float
    severe_sad: Optional[bool] = None

    def feature_vector(self) -> np.ndarray:
        return np.array([
            self.loc_var, self.num_pls, self.ent_pls, self.perc_home,
            self.total_dist, self.max_dist, self.routine_idx,
        ], dtype=float)


# -- significant places ------------------------------------------------------

def _overnight_overlap_ms(start: int, end: int, tz_offset_min: int) -> int:
    """Milliseconds of [start, end] falling in local [00:00, 06:00) of any day."""
    off = tz_offset_min * 60_000
    s, e = start + off, end + off
    total = 0
    for day in range(s // MS_PER_DAY, e // MS_PER_DAY + 1):
        d0 = day * MS_PER_DAY
        total += max(0, min(e, d0 + OVERNIGHT_MS) - max(s, d0))
    return total


def detect_stays(timestamps, lat, lon, d_thresh=200.0, t_thresh=600.0):
    """Time-ordered stay scan.

    Returns a list of (start_idx, end_idx) inclusive index pairs for runs
    whose points all lay within ``d_thresh`` of the run's running centroid
    at the time they joined and whose time span is at least ``t_thresh`` s.
    """
    n = len(timestamps)
    if n == 0:
        return []
    x, y = project_local(lat, lon, float(np.mean(lat)), float(np.mean(lon)))
    xs, ys, ts = x.tolist(), y.tolist(), np.asarray(timestamps).tolist()
    min_span = t_thresh * 1000.0
    r2 = d_thresh * d_thresh
    stays = []
    start = 0
    sx, sy, k = xs[0], ys[0], 1
    for i in range(1, n):
        dx = xs[i] - sx / k
        dy = ys[i] - sy / k
        if dx * dx + dy * dy <= r2:
            sx += xs[i]
            sy += ys[i]
            k += 1
            continue
        if ts[i - 1] - ts[start] >= min_span:
            stays.append((start, i - 1))
        start, sx, sy, k = i, xs[i], ys[i], 1
    if ts[n - 1] - ts[start] >= min_span:
        stays.append((start, n - 1))
    return stays


def cluster_places(points, d_thresh=200.0, t_thresh=600.0, merge_distance=200.0,
                   timezone_offset_minutes=None) -> list[PlaceCluster]:
    """Significant places of a time-sorted Trace or DayTrace.

    Cluster ids follow order of first visit. Centroids are point-count
    weighted means of the member stays.
    """
    ts = np.asarray(points.timestamps)
    if len(ts) == 0:
        return []
    tz = points.timezone_offset_minutes if timezone_offset_minutes is None else timezone_offset_minutes
    lat, lon = np.asarray(points.lat), np.asarray(points.lon)

    # each place: [sum_lat, sum_lon, n_points, visits]
    places: list[list] = []
    for s, e in detect_stays(ts, lat, lon, d_thresh, t_thresh):
        slat, slon, n = lat[s:e + 1].sum(), lon[s:e + 1].sum(), e - s + 1
        visit = (int(ts[s]), int(ts[e]))
        best, best_d = None, None
        for j, p in enumerate(places):
            d = haversine(slat / n, slon / n, p[0] / p[2], p[1] / p[2])
            if d <= merge_distance and (best_d is None or d < best_d):
                best, best_d = j, d
        if best is None:
            places.append([slat, slon, n, [visit]])
        else:
            p = places[best]
            p[0] += slat
            p[1] += slon
            p[2] += n
            p[3].append(visit)

    # centroid drift can bring two places inside merge_distance of each other
    merged = True
    while merged and len(places) > 1:
        merged = False
        c = np.array([[p[0] / p[2], p[1] / p[2]] for p in places])
        dmat = haversine(c[:, None, 0], c[:, None, 1], c[None, :, 0], c[None, :, 1])
        np.fill_diagonal(dmat, np.inf)
        i, j = np.unravel_index(np.argmin(dmat), dmat.shape)
        if dmat[i, j] < merge_distance:
            i, j = min(i, j), max(i, j)
            a, b = places[i], places[j]
            places[i] = [a[0] + b[0], a[1] + b[1], a[2] + b[2], sorted(a[3] + b[3])]
            del places[j]
            merged = True

    places.sort(key=lambda p: min(p[3]))
    out = []
    for cid, (slat, slon, n, visits) in enumerate(places):
        visits = sorted(visits)
        total = sum(e - s for s, e in visits) / 1000.0
        night = sum(_overnight_overlap_ms(s, e, tz) for s, e in visits) / 1000.0
        out.append(PlaceCluster(cid, (slat / n, slon / n), total, night, visits, int(n)))
    return out


def detect_home(clusters) -> Optional[PlaceCluster]:
    """Place with the most 00:00-06:00 dwell; None when there is none."""
    candidates = [c for c in clusters if c.overnight_dwell_s > 0]
    if not candidates:
        return None
    return min(candidates, key=lambda c: (-c.overnight_dwell_s, -c.total_dwell_s, c.cluster_id))


def day_dwell(day: DayTrace, clusters) -> dict[int, float]:
    """Seconds spent at each place during the day (visits clipped to the day)."""
    d0 = day.day_start_ms
    d1 = d0 + MS_PER_DAY
    dwell = {}
    for c in clusters:
        total = 0
        for s, e in c.visits:
            if e <= d0 or s >= d1:
                continue
            total += min(e, d1) - max(s, d0)
        if total > 0:
            dwell[c.cluster_id] = total / 1000.0
    return dwell


# -- individual features -----------------------------------------------------

def location_variance(day, units: str = "m", ddof: int = 0) -> float:
    """sqrt(var(x) + var(y)); x/y in local meters, or raw degrees if units='deg'."""
    lat, lon = np.asarray(day.lat), np.asarray(day.lon)
    if len(lat) < 2:
        raise TooFewPoints("location variance needs at least 2 points")
    if units == "deg":
        x, y = lon, lat
    elif units == "m":
        x, y = project_local(lat, lon, lat.mean(), lon.mean())
    else:
        raise ValueError(f"unknown units {units!r}")
    return float(np.sqrt(np.var(x, ddof=ddof) + np.var(y, ddof=ddof)))


def place_entropy(dwell) -> float:
    """Normalized entropy of dwell shares; 0 for fewer than two places."""
    t = np.array([v for v in (dwell.values() if isinstance(dwell, dict) else dwell) if v > 0],
                 dtype=float)
    k = len(t)
    if k <= 1:
        return 0.0
    p = t / t.sum()
    return float(-np.sum(p * np.log(p)) / np.log(k))


def percent_home(filled_lat, filled_lon, home: Optional[PlaceCluster], d_thresh=200.0) -> float:
    """Fraction of the 48 imputed bins lying within d_thresh of home."""
    if home is None:
        raise HomeUndefined("no home place")
    d = haversine(filled_lat, filled_lon, home.centroid[0], home.centroid[1])
    return float(np.mean(d <= d_thresh))


def total_distance(day) -> float:
    lat, lon = np.asarray(day.lat), np.asarray(day.lon)
    if len(lat) < 2:
        return 0.0
    return float(np.sum(haversine(lat[:-1], lon[:-1], lat[1:], lon[1:])))


def _max_pairwise(lat, lon) -> float:
    # chord length grows with great-circle distance, so the farthest pair of
    # unit vectors (smallest dot product) is the farthest pair on the sphere
    phi, lam = np.radians(lat), np.radians(lon)
    u = np.column_stack([np.cos(phi) * np.cos(lam), np.cos(phi) * np.sin(lam), np.sin(phi)])
    i, j = np.unravel_index(np.argmin(u @ u.T), (len(u), len(u)))
    return float(haversine(lat[i], lon[i], lat[j], lon[j]))


def max_distance(day) -> float:
    lat, lon = np.asarray(day.lat), np.asarray(day.lon)
    n = len(lat)
    if n < 2:
        return 0.0
    if n < EXACT_MAX_DIST_LIMIT:
        return _max_pairwise(lat, lon)
    x, y = project_local(lat, lon, lat.mean(), lon.mean())
    try:
        idx = ConvexHull(np.column_stack([x, y])).vertices
    except QhullError:
        # degenerate (collinear or coincident) point set: extremes suffice
        idx = np.unique([np.argmin(x), np.argmax(x), np.argmin(y), np.argmax(y),
                         np.argmin(x + y), np.argmax(x + y), np.argmin(x - y), np.argmax(x - y)])
    return _max_pairwise(lat[idx], lon[idx])


def bin_labels(filled_lat, filled_lon, disp, clusters, d_thresh=200.0) -> np.ndarray:
    """Label each of the 48 bins by place id, MOVING or UNKNOWN."""
    labels = np.full(N_BINS, UNKNOWN, dtype=np.int64)
    if clusters:
        c = np.array([cl.centroid for cl in clusters])
        ids = np.array([cl.cluster_id for cl in clusters])
        d = haversine(filled_lat[:, None], filled_lon[:, None], c[None, :, 0], c[None, :, 1])
        nearest = np.argmin(d, axis=1)
        near = d[np.arange(N_BINS), nearest] <= d_thresh
        labels[near] = ids[nearest[near]]
    into = np.r_[0.0, disp]
    labels[into > d_thresh] = MOVING
    return labels


def routine_index(day_labels, all_days_labels) -> float:
    """Mean over bins of the share of the other days carrying the same label.

    ``all_days_labels`` holds every day of the participant, including the
    day being scored (matched by identity or, failing that, by value once).
    """
    day_labels = np.asarray(day_labels)
    others = [np.asarray(x) for x in all_days_labels]
    for i, x in enumerate(others):
        if x is day_labels:
            del others[i]
            break
    else:
        for i, x in enumerate(others):
            if np.array_equal(x, day_labels):
                del others[i]
                break
    if not others:
        raise SingleDay("routine index needs at least 2 days")
    agree = np.mean([x == day_labels for x in others], axis=0)
    return float(np.mean(agree))


def routine_indices(labels_matrix) -> np.ndarray:
    """Vectorized routine index for every row of a (days x 48) label matrix."""
    lab = np.asarray(labels_matrix)
    n_days = lab.shape[0]
    if n_days < 2:
        return np.full(n_days, np.nan)
    same = np.zeros(lab.shape, dtype=float)
    for b in range(lab.shape[1]):
        _, inv, counts = np.unique(lab[:, b], return_inverse=True, return_counts=True)
        same[:, b] = counts[inv] - 1
    return same.mean(axis=1) / (n_days - 1)


# -- participant driver ------------------------------------------------------

@dataclass
class ParticipantResult:
    participant_id: str
    group: Group
    places: list[PlaceCluster]
    home: Optional[PlaceCluster]
    phenotypes: list[DailyPhenotypes]
    profiles: list[DisplacementProfile]
    excluded_days: list[tuple[dt.date, str]]


def process_participant(trace: Trace, config: PhenotypeConfig = PhenotypeConfig()) -> ParticipantResult:
    """DDPs and daily phenotypes for one participant.

    Days below ``min_coverage`` are excluded from both outputs and listed
    with a reason. Per-feature failures become NaN, never abort the run.
    """
    days = segment_days(trace)
    places = cluster_places(trace, config.d_thresh, config.t_thresh, config.merge_distance)
    home = detect_home(places)

    kept, excluded, filled, profiles = [], [], [], []
    for day in days:
        if day.coverage_fraction < config.min_coverage:
            excluded.append((day.local_date, InsufficientCoverage.__name__))
            continue
        f = impute_bins(bin_day(day))
        d = displacements(f)
        kept.append(day)
        filled.append(f)
        profiles.append(DisplacementProfile(day.participant_id, day.local_date, day.group, d))

    labels = np.array([
        bin_labels(f.lat, f.lon, p.d, places, config.d_thresh) for f, p in zip(filled, profiles)
    ]).reshape(len(kept), N_BINS)
    routine = routine_indices(labels)

    rows = []
    for day, f, r in zip(kept, filled, routine):
        dwell = day_dwell(day, places)
        try:
            lv = location_variance(day, units=config.loc_var_units)
        except TooFewPoints:
            lv = float("nan")
        try:
            ph = percent_home(f.lat, f.lon, home, config.d_thresh)
        except HomeUndefined:
            ph = float("nan")
        rows.append(DailyPhenotypes(
            participant_id=trace.participant_id,
            local_date=day.local_date,
            group=trace.group,
            loc_var=lv,
            num_pls=len(dwell),
            ent_pls=place_entropy(dwell),
            perc_home=ph,
            total_dist=total_distance(day),
            max_dist=max_distance(day),
            routine_idx=float(r),
        ))
    return ParticipantResult(trace.participant_id, trace.group, places, home, rows, profiles, excluded)


def compute_daily_phenotypes(traces, config: PhenotypeConfig = PhenotypeConfig(),
                             survey: Optional[pd.DataFrame] = None) -> list[DailyPhenotypes]:
    rows = []
    for trace in sorted(traces, key=lambda t: t.participant_id):
        rows.extend(process_participant(trace, config).phenotypes)
    if survey is not None:
        attach_labels(rows, survey)
    return rows


# -- survey labels and tables ------------------------------------------------

QUITE_A_BIT = 3


def read_survey(raw) -> pd.DataFrame:
    """Survey CSV ``participant_id,local_date,sadness_level`` (ordinal 0-4)."""
    if isinstance(raw, (bytes, bytearray)):
        raw = io.StringIO(raw.decode("utf-8-sig"))
    elif isinstance(raw, str) and "\n" in raw:
        raw = io.StringIO(raw)
    df = pd.read_csv(raw, dtype={"participant_id": str, "local_date": str})
    missing = {"participant_id", "local_date", "sadness_level"} - set(df.columns)
    if missing:
        raise DataError(f"survey file missing columns {sorted(missing)}")
    df = df.dropna(subset=["sadness_level"])
    df["severe_sad"] = df["sadness_level"] > QUITE_A_BIT
    return df


def attach_labels(rows, survey: pd.DataFrame) -> None:
    """Set ``severe_sad`` in place by (participant, date); unmatched rows stay None."""
    lookup = {
        (str(p), str(d)): bool(s)
        for p, d, s in zip(survey["participant_id"], survey["local_date"], survey["severe_sad"])
    }
    for r in rows:
        r.severe_sad = lookup.get((r.participant_id, r.local_date.isoformat()))


def phenotype_table(rows) -> pd.DataFrame:
    df = pd.DataFrame({
        "participant_id": [r.participant_id for r in rows],
        "local_date": [r.local_date.isoformat() for r in rows],
        "group": [Group(r.group).value for r in rows],
        "loc.var": [r.loc_var for r in rows],
        "num.pls": [r.num_pls for r in rows],
        "ent.pls": [r.ent_pls for r in rows],
        "perc.home": [r.perc_home for r in rows],
        "total.dist": [r.total_dist for r in rows],
        "max.dist": [r.max_dist for r in rows],
        "routine.idx": [r.routine_idx for r in rows],
        "severe_sad": pd.array([r.severe_sad for r in rows], dtype="boolean"),
    })
    return df


def places_table(results) -> pd.DataFrame:
    rows = []
    for res in results:
        home_id = res.home.cluster_id if res.home is not None else None
        for c in res.places:
            rows.append({
                "participant_id": res.participant_id,
                "cluster_id": c.cluster_id,
                "latitude": c.centroid[0],
                "longitude": c.centroid[1],
                "total_dwell_s": c.total_dwell_s,
                "overnight_dwell_s": c.overnight_dwell_s,
                "n_visits": len(c.visits),
                "is_home": c.cluster_id == home_id,
            })
    return pd.DataFrame(rows, columns=[
        "participant_id", "cluster_id", "latitude", "longitude",
        "total_dwell_s", "overnight_dwell_s", "n_visits", "is_home",
    ])
