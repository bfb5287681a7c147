import datetime as dt
import itertools

import numpy as np
import pandas as pd
import pytest

from mobpheno.errors import HomeUndefined, SingleDay, TooFewPoints
from mobpheno.geo import haversine, offset_coords
from mobpheno.ingest import MS_PER_DAY, Trace
from mobpheno.phenotypes import (
    FEATURE_COLUMNS, MOVING, UNKNOWN, PhenotypeConfig, PlaceCluster, bin_labels, cluster_places,
    detect_home, detect_stays, location_variance, max_distance, percent_home, phenotype_table,
    place_entropy, process_participant, read_survey, routine_index, routine_indices,
    total_distance,
)

from conftest import DAY0, make_day, make_trace

LAT0, LON0 = 30.28, -97.73


def commuter(n_days=5, tz=0, step_min=2):
    """Home 00:00-08:00 and 18:00-24:00, office 3 km east 09:00-17:00."""
    olat, olon = offset_coords(LAT0, LON0, 3000.0, 0.0)
    minutes, lat, lon = [], [], []
    for d in range(n_days):
        for m in range(0, 24 * 60, step_min):
            if m < 8 * 60 or m >= 18 * 60:
                a, o = LAT0, LON0
            elif 9 * 60 <= m < 17 * 60:
                a, o = olat, olon
            else:
                # one-hour transit each way at walking pace
                f = (m - 8 * 60) / 60 if m < 9 * 60 else 1 - (m - 17 * 60) / 60
                a, o = offset_coords(LAT0, LON0, 3000.0 * f, 0.0)
            minutes.append(d * 1440 + m)
            lat.append(a)
            lon.append(o)
    return make_trace(minutes, lat, lon, tz=tz)


# -- clustering ---------------------------------------------------------------

def test_stationary_eight_hours():
    t = make_trace(np.arange(0, 8 * 60, 1), LAT0, LON0)
    (c,) = cluster_places(t)
    assert c.total_dwell_s == pytest.approx(8 * 3600 - 60)
    assert c.overnight_dwell_s == pytest.approx(6 * 3600)


def test_two_dwells_with_transit():
    blat, blon = offset_coords(LAT0, LON0, 5000.0, 0.0)
    stay_a = [(m, LAT0, LON0) for m in range(0, 120)]
    transit = [(120 + m, *offset_coords(LAT0, LON0, 500.0 * m, 0.0)) for m in range(1, 10)]
    stay_b = [(130 + m, blat, blon) for m in range(0, 120)]
    rows = stay_a + transit + stay_b
    t = make_trace(*zip(*rows))
    cl = cluster_places(t)
    assert len(cl) == 2
    assert haversine(*cl[0].centroid, LAT0, LON0) < 1 and haversine(*cl[1].centroid, blat, blon) < 1


def test_drive_through_has_no_places():
    minutes = np.arange(0, 120)
    coords = [offset_coords(LAT0, LON0, 600.0 * m, 0.0) for m in minutes]
    t = make_trace(minutes, [c[0] for c in coords], [c[1] for c in coords])
    assert cluster_places(t) == []
    assert detect_stays(t.timestamps, t.lat, t.lon) == []


def test_cluster_invariants():
    cl = cluster_places(commuter())
    assert len(cl) == 2
    for a, b in itertools.combinations(cl, 2):
        assert haversine(*a.centroid, *b.centroid) >= 200
    for c in cl:
        assert c.total_dwell_s >= c.overnight_dwell_s >= 0


def test_home_detection():
    cl = cluster_places(commuter())
    home = detect_home(cl)
    assert haversine(*home.centroid, LAT0, LON0) < 1
    a = PlaceCluster(0, (0, 0), 7 * 3600, 6 * 3600)
    b = PlaceCluster(1, (1, 1), 20 * 3600, 1 * 3600)
    assert detect_home([b, a]) is a
    assert detect_home([PlaceCluster(0, (0, 0), 100, 5)]).cluster_id == 0


def test_home_undefined_without_night_data():
    t = make_trace(np.arange(9 * 60, 17 * 60), LAT0, LON0)
    assert detect_home(cluster_places(t)) is None
    res = process_participant(t, PhenotypeConfig(min_coverage=0.0))
    assert res.home is None and np.isnan(res.phenotypes[0].perc_home)


def test_overnight_uses_local_time():
    # 00:00-06:00 local at UTC-6 lies 06:00-12:00 UTC
    t = make_trace(np.arange(0, 6 * 60), LAT0, LON0, tz=-360)
    (c,) = cluster_places(t)
    assert c.overnight_dwell_s == pytest.approx(c.total_dwell_s)


# -- single features ----------------------------------------------------------

def test_location_variance_identical_points():
    assert location_variance(make_day([0, 1, 2], LAT0, LON0)) == 0.0


def test_location_variance_two_points():
    lat, lon = offset_coords(LAT0, LON0, 100.0, 0.0)
    day = make_day([0, 1], [LAT0, lat], [LON0, lon])
    assert location_variance(day) == pytest.approx(50.0, abs=1e-3)
    assert location_variance(day, ddof=1) == pytest.approx(70.71, abs=1e-2)


def test_location_variance_rotation_invariant(rng):
    e, n = rng.normal(0, 300, (2, 50))
    e, n = e - e.mean(), n - n.mean()  # rotate about the centroid
    lat1, lon1 = offset_coords(LAT0, LON0, e, n)
    lat2, lon2 = offset_coords(LAT0, LON0, -n, e)
    a = location_variance(make_day(np.arange(50), lat1, lon1))
    b = location_variance(make_day(np.arange(50), lat2, lon2))
    assert a == pytest.approx(b, abs=1e-6)


def test_location_variance_too_few():
    with pytest.raises(TooFewPoints):
        location_variance(make_day([0], LAT0, LON0))


def test_place_entropy():
    assert place_entropy({0: 100.0}) == 0.0
    assert place_entropy({0: 50.0, 1: 50.0}) == pytest.approx(1.0)
    assert place_entropy([0.5, 0.25, 0.25]) == pytest.approx(0.94639, abs=1e-4)
    assert place_entropy({}) == 0.0


def test_place_entropy_bounds(rng):
    for _ in range(200):
        e = place_entropy(rng.exponential(size=rng.integers(2, 8)))
        assert 0 <= e < 1


def test_percent_home():
    home = PlaceCluster(0, (LAT0, LON0), 1, 1)
    far = offset_coords(LAT0, LON0, 0.0, 1000.0)
    lat = np.full(48, LAT0)
    lon = np.full(48, LON0)
    assert percent_home(lat, lon, home) == 1.0
    lat[12:] = far[0]
    lon[12:] = far[1]
    assert percent_home(lat, lon, home) == 0.25
    with pytest.raises(HomeUndefined):
        percent_home(lat, lon, None)


def test_percent_home_counts_imputed_gap():
    # observed at home in the morning and evening, silent in between
    minutes = [m for m in range(0, 1440, 15) if not 8 * 60 <= m < 20 * 60]
    t = make_trace([m + d * 1440 for d in range(2) for m in minutes], LAT0, LON0)
    res = process_participant(t, PhenotypeConfig(min_coverage=0.0))
    assert res.phenotypes[0].perc_home == 1.0


def test_distances_stationary_and_out_and_back():
    day = make_day([0, 1, 2], LAT0, LON0)
    assert total_distance(day) == 0.0 and max_distance(day) == 0.0
    far = offset_coords(LAT0, LON0, 1000.0, 0.0)
    day = make_day([0, 30, 60], [LAT0, far[0], LAT0], [LON0, far[1], LON0])
    assert total_distance(day) == pytest.approx(2000.0, abs=1)
    assert max_distance(day) == pytest.approx(1000.0, abs=0.5)


def test_max_distance_matches_brute_force(rng):
    for _ in range(500):
        n = int(rng.integers(2, 40))
        e, nn = rng.normal(0, 2000, (2, n))
        lat, lon = offset_coords(LAT0, LON0, e, nn)
        day = make_day(np.arange(n), lat, lon)
        brute = max(haversine(lat[i], lon[i], lat[j], lon[j]) for i in range(n) for j in range(n))
        m = max_distance(day)
        assert m == pytest.approx(brute, rel=1e-9)
        assert m <= total_distance(day) + 1e-9


def test_max_distance_large_input_uses_hull(rng):
    e, n = rng.normal(0, 1000, (2, 6000))
    lat, lon = offset_coords(LAT0, LON0, e, n)
    idx = np.argsort(e)[[0, -1]]
    day = make_day(np.arange(6000) / 10, lat, lon)
    best = max_distance(day)
    assert best >= haversine(lat[idx[0]], lon[idx[0]], lat[idx[1]], lon[idx[1]])
    sample = rng.choice(6000, 400, replace=False)
    sub = max(haversine(lat[i], lon[i], lat[j], lon[j]) for i in sample for j in sample)
    assert best >= sub


# -- routine ------------------------------------------------------------------

def test_routine_identical_days():
    days = [np.zeros(48, int) for _ in range(4)]
    assert routine_index(days[0], days) == 1.0


def test_routine_unique_day():
    days = [np.zeros(48, int) for _ in range(3)] + [np.ones(48, int)]
    assert routine_index(days[3], days) == 0.0


def test_routine_half_agreement():
    me = np.zeros(48, int)
    days = [me, np.zeros(48, int), np.zeros(48, int), np.ones(48, int), np.ones(48, int)]
    assert routine_index(me, days) == 0.5


def test_routine_single_day():
    with pytest.raises(SingleDay):
        routine_index(np.zeros(48), [np.zeros(48)])


def test_routine_vectorized_matches_direct(rng):
    lab = rng.integers(-2, 3, (9, 48))
    rows = [lab[i] for i in range(9)]
    direct = [routine_index(rows[i], rows) for i in range(9)]
    np.testing.assert_allclose(routine_indices(lab), direct)
    perm = rng.permutation(np.arange(1, 9))
    assert routine_index(rows[0], [rows[0]] + [rows[i] for i in perm]) == pytest.approx(direct[0])


def test_bin_labels():
    c = [PlaceCluster(7, (LAT0, LON0), 1, 1)]
    far = offset_coords(LAT0, LON0, 5000.0, 0.0)
    lat = np.r_[np.full(24, LAT0), np.full(24, far[0])]
    lon = np.r_[np.full(24, LON0), np.full(24, far[1])]
    disp = haversine(lat[:-1], lon[:-1], lat[1:], lon[1:])
    lab = bin_labels(lat, lon, disp, c)
    assert (lab[:24] == 7).all() and lab[24] == MOVING and (lab[25:] == UNKNOWN).all()


# -- participant driver -------------------------------------------------------

def test_stationary_participant():
    t = make_trace(np.arange(0, 3 * 1440, 10), LAT0, LON0)
    res = process_participant(t)
    assert len(res.phenotypes) == 3
    for r in res.phenotypes:
        assert (r.num_pls, r.ent_pls, r.perc_home, r.total_dist, r.max_dist) == (1, 0.0, 1.0, 0.0, 0.0)
        assert r.routine_idx == 1.0


def test_two_place_commuter():
    res = process_participant(commuter(tz=-300))
    assert [r.num_pls for r in res.phenotypes] == [2] * 5
    for r in res.phenotypes:
        assert 0 < r.ent_pls < 1
        assert 0.5 < r.perc_home < 0.75
        assert r.max_dist == pytest.approx(3000, abs=2)
        assert r.max_dist <= r.total_dist


def test_num_pls_invariant_to_whole_day_shift():
    base = commuter(3)
    shifted = Trace(base.participant_id, base.group, base.timestamps + 7 * MS_PER_DAY,
                    base.lat, base.lon, base.accuracy)
    a = [r.num_pls for r in process_participant(base).phenotypes]
    b = [r.num_pls for r in process_participant(shifted).phenotypes]
    assert a == b


def test_low_coverage_days_excluded():
    t = make_trace(list(range(0, 1440, 10)) + [1440 + 5], LAT0, LON0)
    res = process_participant(t)
    assert len(res.phenotypes) == 1
    assert res.excluded_days == [(DAY0 + dt.timedelta(days=1), "InsufficientCoverage")]


def test_survey_labels_and_table():
    res = process_participant(commuter(3))
    survey = read_survey("participant_id,local_date,sadness_level\n"
                         "p01,2020-02-03,4\np01,2020-02-04,3\n")
    from mobpheno.phenotypes import attach_labels
    attach_labels(res.phenotypes, survey)
    df = phenotype_table(res.phenotypes)
    assert list(df.columns[3:10]) == FEATURE_COLUMNS
    assert df["severe_sad"].tolist()[:2] == [True, False]
    assert pd.isna(df["severe_sad"].iloc[2])
