"""Synthetic student cohorts with known schedules and a GPS duty cycle.

Each participant has a home and a handful of campus places. Every day is
a piecewise-linear path through local meters (stays are keypoint pairs at
one location, travel is straight-line at constant speed) that starts and
ends at home. The phone samples the path during 60 s of every 600 s.

Two scenarios:

``PRE_LIKE``
    leave home 8-10am, 1-3 campus places, head home 7-9pm.
``POST_LIKE``
    home-dominant; at most one midday errand place, plus occasional
    continuous wandering walks around home.

Seeds: participant ``i`` of a cohort draws from
``SeedSequence([seed, SCENARIO_CODE[scenario], i])``.
"""
from __future__ import annotations

import datetime as dt
import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from .errors import InvalidSpec
from .geo import offset_coords
from .ingest import EPOCH, MS_PER_DAY, Group

DAY_S = 86_400.0
WALK_SEGMENTS = 16
AUSTIN = (30.2849, -97.7341)


class Scenario(str, Enum):
    PRE_LIKE = "PRE_LIKE"
    POST_LIKE = "POST_LIKE"


SCENARIO_CODE = {Scenario.PRE_LIKE: 1, Scenario.POST_LIKE: 2}
SCENARIO_GROUP = {Scenario.PRE_LIKE: Group.PRE, Scenario.POST_LIKE: Group.POST}


@dataclass
class Place:
    name: str
    east_m: float
    north_m: float


@dataclass
class SadnessModel:
    """logit P(severe) = intercept + participant effect
    + signal_strength * (num_places * (n_places - 2) + home_fraction * (home_frac - 0.6))"""

    intercept: float = -2.0
    num_places: float = -1.5
    home_fraction: float = 6.0
    participant_sd: float = 0.8
    signal_strength: float = 1.0
    response_prob: float = 0.9


@dataclass
class ScheduleSpec:
    scenario: Scenario
    places: list[Place]
    center: tuple[float, float] = AUSTIN
    start_date: str = "2020-01-15"
    timezone_offset_minutes: int = -360
    home_radius_m: float = 3000.0
    places_per_participant: int = 5
    places_per_day: dict[int, float] = field(default_factory=lambda: {2: 0.40, 3: 0.47, 4: 0.13})
    depart_window_h: tuple[float, float] = (8.0, 10.0)
    return_window_h: tuple[float, float] = (19.0, 21.0)
    errand_window_h: tuple[float, float] = (11.0, 17.0)
    errand_stay_h: tuple[float, float] = (0.75, 2.0)
    local_places: int = 0  # > 0: destinations are this many places near home, not campus
    local_place_distance_m: tuple[float, float] = (500.0, 1500.0)
    walk_prob: float = 0.0
    walk_duration_h: tuple[float, float] = (0.5, 1.5)
    min_stay_min: float = 45.0
    jitter_sd_min: float = 15.0
    speed_mps: float = 1.4
    noise_sd_m: float = 5.0
    duty_on_s: float = 60.0
    duty_period_s: float = 600.0
    sample_interval_s: float = 30.0
    window_drop_prob: float = 0.03
    gap_prob: float = 0.1
    gap_hours: tuple[float, float] = (1.0, 4.0)
    min_place_separation_m: float = 400.0
    sadness: SadnessModel = field(default_factory=SadnessModel)

    # -- construction ----------------------------------------------------------

    @classmethod
    def pre_like(cls, campus_seed: int = 2020, **overrides) -> "ScheduleSpec":
        kw = dict(scenario=Scenario.PRE_LIKE, places=campus_places(seed=campus_seed),
                  speed_mps=4.0)
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def post_like(cls, campus_seed: int = 2020, **overrides) -> "ScheduleSpec":
        kw = dict(
            scenario=Scenario.POST_LIKE,
            places=campus_places(seed=campus_seed),
            start_date="2020-05-01",
            timezone_offset_minutes=-300,
            places_per_day={1: 0.27, 2: 0.73},
            local_places=3,
            walk_prob=0.4,
            sadness=SadnessModel(signal_strength=0.8),
        )
        kw.update(overrides)
        return cls(**kw)

    def validate(self) -> None:
        s = self
        if not s.places:
            raise InvalidSpec("no places")
        xy = np.array([[p.east_m, p.north_m] for p in s.places])
        if len(xy) > 1:
            d = np.hypot(xy[:, None, 0] - xy[None, :, 0], xy[:, None, 1] - xy[None, :, 1])
            np.fill_diagonal(d, np.inf)
            if d.min() < s.min_place_separation_m:
                raise InvalidSpec(f"places closer than {s.min_place_separation_m} m")
        if not 1 <= s.places_per_participant <= len(s.places):
            raise InvalidSpec("places_per_participant out of range")
        probs = np.array(list(s.places_per_day.values()), dtype=float)
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise InvalidSpec("places_per_day probabilities must be >= 0 and sum to 1")
        n_dest = s.local_places or s.places_per_participant
        for k in s.places_per_day:
            if not 1 <= int(k) <= n_dest + 1:
                raise InvalidSpec(f"cannot visit {k} distinct places per day")
        if s.scenario == Scenario.POST_LIKE and max(int(k) for k in s.places_per_day) > 2:
            raise InvalidSpec("POST_LIKE days visit at most one place besides home")
        for name in ("depart_window_h", "return_window_h", "errand_window_h",
                     "errand_stay_h", "walk_duration_h", "gap_hours", "local_place_distance_m"):
            lo, hi = getattr(s, name)
            if not 0 <= lo <= hi:
                raise InvalidSpec(f"{name} must satisfy 0 <= low <= high")
        if not s.depart_window_h[1] < s.return_window_h[0]:
            raise InvalidSpec("departure window must precede return window")
        if s.return_window_h[1] > 23.0:
            raise InvalidSpec("return window must end by 23:00")
        if s.local_places < 0:
            raise InvalidSpec("local_places must be >= 0")
        if s.local_place_distance_m[0] < s.min_place_separation_m:
            raise InvalidSpec("local places must lie at least min_place_separation_m from home")
        if s.speed_mps <= 0 or s.sample_interval_s <= 0 or s.noise_sd_m < 0:
            raise InvalidSpec("speed and sample interval must be positive, noise non-negative")
        if not 0 < s.duty_on_s <= s.duty_period_s:
            raise InvalidSpec("duty cycle must satisfy 0 < on <= period")
        for name in ("walk_prob", "window_drop_prob", "gap_prob"):
            if not 0 <= getattr(s, name) <= 1:
                raise InvalidSpec(f"{name} must be a probability")
        if not 0 < s.sadness.response_prob <= 1:
            raise InvalidSpec("response_prob must be in (0, 1]")
        try:
            dt.date.fromisoformat(s.start_date)
        except ValueError as e:
            raise InvalidSpec(f"bad start_date {s.start_date!r}") from e

    # -- JSON ------------------------------------------------------------------

    def to_json(self) -> str:
        d = asdict(self)
        d["scenario"] = self.scenario.value
        d["places_per_day"] = {str(k): v for k, v in self.places_per_day.items()}
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScheduleSpec":
        try:
            d = json.loads(text)
            d["scenario"] = Scenario(d["scenario"])
            d["places"] = [Place(**p) for p in d["places"]]
            d["places_per_day"] = {int(k): float(v) for k, v in d["places_per_day"].items()}
            d["sadness"] = SadnessModel(**d.get("sadness", {}))
            for k, v in list(d.items()):
                if isinstance(v, list) and k != "places":
                    d[k] = tuple(v)
            spec = cls(**d)
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidSpec(f"cannot read schedule spec: {e}") from e
        spec.validate()
        return spec


def campus_places(n: int = 12, extent_m: float = 2500.0, min_sep_m: float = 450.0,
                  seed: int = 2020) -> list[Place]:
    """Campus destinations scattered over a square, pairwise >= min_sep_m apart."""
    rng = np.random.default_rng(seed)
    pts: list[np.ndarray] = []
    while len(pts) < n:
        c = rng.uniform(-extent_m, extent_m, size=2)
        if all(np.hypot(*(c - q)) >= min_sep_m for q in pts):
            pts.append(c)
    return [Place(f"campus_{i:02d}", round(float(p[0]), 1), round(float(p[1]), 1))
            for i, p in enumerate(pts)]


# -- one participant -------------------------------------------------------------

@dataclass
class DayTruth:
    local_date: dt.date
    n_places: int
    home_fraction: float
    path_m: float
    logit: float
    severe: bool
    sadness_level: Optional[int]


@dataclass
class ParticipantTruth:
    participant_id: str
    group: Group
    home_lat: float
    home_lon: float
    effect: float
    days: list[DayTruth]


def _pick_home(rng, spec: ScheduleSpec, xy: np.ndarray) -> np.ndarray:
    while True:
        r = spec.home_radius_m * np.sqrt(rng.uniform())
        a = rng.uniform(0, 2 * np.pi)
        h = np.array([r * np.cos(a), r * np.sin(a)])
        if np.all(np.hypot(*(xy - h).T) >= spec.min_place_separation_m):
            return h


def _pick_local_places(rng, spec: ScheduleSpec, home: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Neighbourhood places around home, clear of each other and of campus."""
    found: list[np.ndarray] = []
    for _ in range(10_000):
        if len(found) == spec.local_places:
            break
        r = rng.uniform(*spec.local_place_distance_m)
        a = rng.uniform(0, 2 * np.pi)
        c = home + r * np.array([np.cos(a), np.sin(a)])
        others = np.vstack([xy] + found) if found else xy
        if np.all(np.hypot(*(others - c).T) >= spec.min_place_separation_m):
            found.append(c[None, :])
    else:
        raise InvalidSpec("could not place local places")
    return np.vstack(found) if found else np.empty((0, 2))


def _sample_k(rng, spec: ScheduleSpec) -> int:
    ks = sorted(spec.places_per_day)
    return int(ks[rng.choice(len(ks), p=[spec.places_per_day[k] for k in ks])])


class _Path:
    """Keypoint path (t seconds into day, x, y meters) with bookkeeping."""

    def __init__(self, home):
        self.home = np.asarray(home, dtype=float)
        self.t = [0.0]
        self.xy = [self.home.copy()]
        self.home_s = 0.0
        self.visited = {-1}  # -1 = home

    @property
    def now(self):
        return self.t[-1]

    @property
    def here(self):
        return self.xy[-1]

    def stay_until(self, t_end, place_id):
        t_end = max(t_end, self.now)
        if place_id == -1:
            self.home_s += t_end - self.now
        self.t.append(t_end)
        self.xy.append(self.here.copy())
        self.visited.add(place_id)

    def travel_to(self, xy, speed):
        xy = np.asarray(xy, dtype=float)
        dur = float(np.hypot(*(xy - self.here))) / speed
        self.t.append(self.now + dur)
        self.xy.append(xy.copy())

    def travel_time(self, a, b, speed):
        return float(np.hypot(*(np.asarray(b) - np.asarray(a)))) / speed

    def finish(self):
        if np.hypot(*(self.here - self.home)) > 1e-9 or self.now > DAY_S:
            raise InvalidSpec("schedule did not fit in one day")
        self.stay_until(DAY_S, -1)
        t = np.array(self.t)
        xy = np.array(self.xy)
        return t, xy

    def path_length(self):
        xy = np.array(self.xy)
        return float(np.sum(np.hypot(*np.diff(xy, axis=0).T)))


def _walk_loop(rng, spec, path: _Path, start_s: float, end_by_s: float) -> None:
    """Continuous walk around a circle through home, no stops.

    The circle's perimeter matches the sampled walk duration, so the walk
    never passes the same non-home spot twice.
    """
    dur = rng.uniform(*spec.walk_duration_h) * 3600.0
    dur = min(dur, end_by_s - start_s)
    if dur <= 0:
        return
    radius = dur * spec.speed_mps / (2 * np.pi)
    a0 = rng.uniform(0, 2 * np.pi)
    centre = path.home + radius * np.array([np.cos(a0), np.sin(a0)])
    direction = rng.choice([-1.0, 1.0])
    path.stay_until(start_s, -1)
    for ang in np.linspace(0, 2 * np.pi, WALK_SEGMENTS + 1)[1:-1]:
        a = a0 + np.pi + direction * ang
        path.travel_to(centre + radius * np.array([np.cos(a), np.sin(a)]), spec.speed_mps)
    path.travel_to(path.home, spec.speed_mps)


def _plan_pre(rng, spec, home, mine, xy) -> _Path:
    k = _sample_k(rng, spec)
    jit = spec.jitter_sd_min * 60.0
    dep = rng.uniform(*spec.depart_window_h) * 3600.0 + rng.normal(0, jit)
    ret = rng.uniform(*spec.return_window_h) * 3600.0 + rng.normal(0, jit)
    dep = float(np.clip(dep, 6 * 3600.0, 11 * 3600.0))
    ret = float(np.clip(ret, 17 * 3600.0, 22 * 3600.0))
    min_stay = spec.min_stay_min * 60.0
    while True:
        dests = list(rng.choice(mine, size=k - 1, replace=False))
        stops = [home] + [xy[d] for d in dests]
        travel = sum(float(np.hypot(*(stops[i + 1] - stops[i]))) for i in range(len(stops) - 1))
        avail = ret - dep - travel / spec.speed_mps - (k - 1) * min_stay
        if avail > 0 or k == 2:
            break
        k -= 1
    extra = rng.dirichlet(np.full(k - 1, 2.0)) * max(avail, 0.0)
    path = _Path(home)
    path.stay_until(dep, -1)
    for d, e in zip(dests, extra):
        path.travel_to(xy[d], spec.speed_mps)
        path.stay_until(path.now + min_stay + e, int(d))
    path.travel_to(home, spec.speed_mps)
    return path


def _plan_post(rng, spec, home, mine, xy) -> _Path:
    k = _sample_k(rng, spec)
    lo, hi = (h * 3600.0 for h in spec.errand_window_h)
    path = _Path(home)
    walk = rng.uniform() < spec.walk_prob
    if k == 2:
        dest = int(rng.choice(mine))
        stay = rng.uniform(*spec.errand_stay_h) * 3600.0
        trip = 2 * path.travel_time(home, xy[dest], spec.speed_mps) + stay
        start = rng.uniform(lo, max(lo, hi - trip))
        walk_first = walk and rng.uniform() < 0.5 and start - lo > 2.5 * 3600.0
        if walk_first:
            _walk_loop(rng, spec, path, lo + rng.uniform(0, 1800.0), start - 600.0)
        path.stay_until(start, -1)
        path.travel_to(xy[dest], spec.speed_mps)
        path.stay_until(path.now + stay, dest)
        path.travel_to(home, spec.speed_mps)
        if walk and not walk_first:
            t0 = path.now + rng.uniform(1800.0, 3600.0)
            _walk_loop(rng, spec, path, t0, max(hi, t0) + 3 * 3600.0)
    elif walk:
        t0 = rng.uniform(lo, hi - spec.walk_duration_h[1] * 3600.0 * 0.5)
        _walk_loop(rng, spec, path, t0, hi + 3 * 3600.0)
    return path


def _sample_times(rng, spec: ScheduleSpec, phase: float) -> np.ndarray:
    starts = np.arange(phase, DAY_S, spec.duty_period_s)
    starts = starts[rng.uniform(size=starts.size) >= spec.window_drop_prob]
    offsets = np.arange(0.0, spec.duty_on_s, spec.sample_interval_s)
    t = (starts[:, None] + offsets[None, :]).ravel()
    t = t[t < DAY_S]
    if rng.uniform() < spec.gap_prob:
        g = rng.uniform(*spec.gap_hours) * 3600.0
        g0 = rng.uniform(0, DAY_S - g)
        t = t[(t < g0) | (t >= g0 + g)]
    return t


def simulate_participant(spec: ScheduleSpec, participant_id: str, n_days: int,
                         rng: np.random.Generator):
    """Returns (points DataFrame in UTC ms, ParticipantTruth)."""
    xy = np.array([[p.east_m, p.north_m] for p in spec.places])
    home = _pick_home(rng, spec, xy)
    mine = rng.choice(len(spec.places), size=spec.places_per_participant, replace=False)
    if spec.local_places:
        local = _pick_local_places(rng, spec, home, xy)
        mine = np.arange(len(xy), len(xy) + len(local))
        xy = np.vstack([xy, local])
    phase = rng.uniform(0, spec.duty_period_s)
    sad = spec.sadness
    effect = rng.normal(0.0, sad.participant_sd)
    start = dt.date.fromisoformat(spec.start_date)
    plan = _plan_pre if spec.scenario == Scenario.PRE_LIKE else _plan_post

    chunks, truths = [], []
    for day in range(n_days):
        date = start + dt.timedelta(days=day)
        path = plan(rng, spec, home, mine, xy)
        path_m = path.path_length()
        t_key, xy_key = path.finish()
        t = _sample_times(rng, spec, phase)
        x = np.interp(t, t_key, xy_key[:, 0]) + rng.normal(0, spec.noise_sd_m, t.size)
        y = np.interp(t, t_key, xy_key[:, 1]) + rng.normal(0, spec.noise_sd_m, t.size)
        ms = np.round(t * 1000.0).astype(np.int64)
        ms += (date - EPOCH).days * MS_PER_DAY - spec.timezone_offset_minutes * 60_000
        chunks.append((ms, x, y, rng.uniform(3.0, 20.0, t.size)))

        n_places = len(path.visited)
        home_frac = path.home_s / DAY_S
        logit = sad.intercept + effect + sad.signal_strength * (
            sad.num_places * (n_places - 2) + sad.home_fraction * (home_frac - 0.6))
        severe = bool(rng.uniform() < 1.0 / (1.0 + np.exp(-logit)))
        level = 4 if severe else int(rng.choice(4, p=[0.35, 0.30, 0.20, 0.15]))
        responded = rng.uniform() < sad.response_prob
        truths.append(DayTruth(date, n_places, home_frac, path_m, float(logit), severe,
                               level if responded else None))

    ms = np.concatenate([c[0] for c in chunks])
    lat, lon = offset_coords(spec.center[0], spec.center[1],
                             np.concatenate([c[1] for c in chunks]),
                             np.concatenate([c[2] for c in chunks]))
    points = pd.DataFrame({
        "timestamp_ms": ms,
        "latitude": np.round(lat, 7),
        "longitude": np.round(lon, 7),
        "accuracy_m": np.round(np.concatenate([c[3] for c in chunks]), 1),
    })
    hlat, hlon = offset_coords(spec.center[0], spec.center[1], home[0], home[1])
    truth = ParticipantTruth(participant_id, SCENARIO_GROUP[spec.scenario],
                             float(hlat), float(hlon), float(effect), truths)
    return points, truth


# -- cohorts ---------------------------------------------------------------------

@dataclass
class Cohort:
    gps: dict  # participant_id -> points DataFrame
    roster: pd.DataFrame
    survey: pd.DataFrame
    ground_truth: pd.DataFrame
    specs: list  # ScheduleSpec per scenario used

    def gps_csv(self, participant_id: str) -> str:
        return self.gps[participant_id].to_csv(index=False, float_format="%.7f",
                                               lineterminator="\n")

    def merge(self, other: "Cohort") -> "Cohort":
        return Cohort(
            {**self.gps, **other.gps},
            pd.concat([self.roster, other.roster], ignore_index=True),
            pd.concat([self.survey, other.survey], ignore_index=True),
            pd.concat([self.ground_truth, other.ground_truth], ignore_index=True),
            self.specs + other.specs,
        )


def _truth_rows(truth: ParticipantTruth, sad: SadnessModel):
    for d in truth.days:
        yield {
            "participant_id": truth.participant_id,
            "local_date": d.local_date.isoformat(),
            "group": truth.group.value,
            "true_num_places": d.n_places,
            "true_home_fraction": d.home_fraction,
            "true_path_m": d.path_m,
            "true_home_lat": truth.home_lat,
            "true_home_lon": truth.home_lon,
            "participant_effect": truth.effect,
            "true_logit": d.logit,
            "severe_sad": d.severe,
            "sadness_level": d.sadness_level,
            "coef_intercept": sad.intercept,
            "coef_num_places": sad.num_places * sad.signal_strength,
            "coef_home_fraction": sad.home_fraction * sad.signal_strength,
        }


def generate_cohort(spec: ScheduleSpec, n_participants: int,
                    n_days: Union[int, Sequence[int]], seed: int,
                    id_prefix: Optional[str] = None) -> Cohort:
    """Deterministic cohort of one scenario."""
    spec.validate()
    if n_participants < 1:
        raise InvalidSpec("n_participants must be >= 1")
    days = [n_days] * n_participants if np.isscalar(n_days) else list(n_days)
    if len(days) != n_participants or min(days) < 1:
        raise InvalidSpec("n_days must be >= 1 per participant")
    prefix = id_prefix or SCENARIO_GROUP[spec.scenario].value.lower()
    gps, roster, survey, gt = {}, [], [], []
    for i in range(n_participants):
        pid = f"{prefix}_{i:03d}"
        rng = np.random.default_rng(np.random.SeedSequence([seed, SCENARIO_CODE[spec.scenario], i]))
        points, truth = simulate_participant(spec, pid, int(days[i]), rng)
        gps[pid] = points
        roster.append({"participant_id": pid, "group": truth.group.value,
                       "timezone_offset_minutes": spec.timezone_offset_minutes})
        for d in truth.days:
            if d.sadness_level is not None:
                survey.append({"participant_id": pid, "local_date": d.local_date.isoformat(),
                               "sadness_level": d.sadness_level})
        gt.extend(_truth_rows(truth, spec.sadness))
    return Cohort(
        gps,
        pd.DataFrame(roster, columns=["participant_id", "group", "timezone_offset_minutes"]),
        pd.DataFrame(survey, columns=["participant_id", "local_date", "sadness_level"]),
        pd.DataFrame(gt),
        [spec],
    )


def paper_scale_days(n_participants: int = 126, total_days: int = 6442) -> list[int]:
    """Split ``total_days`` as evenly as possible across participants."""
    base, extra = divmod(total_days, n_participants)
    return [base + (1 if i < extra else 0) for i in range(n_participants)]


def generate_study(n_pre: int, n_post: int, n_days: Union[int, Sequence[int]], seed: int,
                   pre_spec: Optional[ScheduleSpec] = None,
                   post_spec: Optional[ScheduleSpec] = None) -> Cohort:
    """PRE_LIKE and POST_LIKE cohorts merged into one study."""
    days = [n_days] * (n_pre + n_post) if np.isscalar(n_days) else list(n_days)
    pre = generate_cohort(pre_spec or ScheduleSpec.pre_like(), n_pre, days[:n_pre], seed)
    post = generate_cohort(post_spec or ScheduleSpec.post_like(), n_post, days[n_pre:], seed)
    return pre.merge(post)


def write_cohort(cohort: Cohort, out_dir: Union[str, Path]) -> Path:
    """Write gps/<id>.csv, roster.csv, survey.csv, ground_truth.csv and spec JSONs."""
    out = Path(out_dir)
    (out / "gps").mkdir(parents=True, exist_ok=True)
    for pid in sorted(cohort.gps):
        (out / "gps" / f"{pid}.csv").write_text(cohort.gps_csv(pid))
    cohort.roster.to_csv(out / "roster.csv", index=False, lineterminator="\n")
    cohort.survey.to_csv(out / "survey.csv", index=False, lineterminator="\n")
    cohort.ground_truth.to_csv(out / "ground_truth.csv", index=False, lineterminator="\n",
                               float_format="%.9g")
    for spec in cohort.specs:
        (out / f"schedule_{spec.scenario.value.lower()}.json").write_text(spec.to_json() + "\n")
    return out
