import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alarmthresh.ingest import CellDay
from alarmthresh.labels import (
    derive_labels,
    derive_labels_batch,
    holdout_cells,
    ks_holdout_check,
    labels_for_cell_days,
    sensitivity_factor,
)


def oracle_percentile(values, q):
    s = sorted(values)
    pos = q * (len(s) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


def oracle_factor(hour):
    if 19 <= hour <= 24:
        return 0.5
    if 8 <= hour <= 12:
        return 1.0
    return 1.25


def oracle_labels(inactive, fluct, start):
    window = [(start - 1 + k) % 24 for k in range(8)]
    wi = [inactive[i] for i in window]
    wf = [fluct[i] for i in window]
    t1 = min(8, max(2, sum(1 for v in wi if v > 5)))
    t2 = max(5.0, oracle_percentile(wi, 0.75) * oracle_factor(start))
    t3 = max(1.0, oracle_percentile(wf, 0.90))
    return t1, t2, t3, t3


def _place(window_values, start):
    arr = np.zeros(24)
    for k, v in enumerate(window_values):
        arr[(start - 1 + k) % 24] = v
    return arr


@pytest.mark.parametrize("hour,factor", [(20, 0.5), (9, 1.0), (3, 1.25)])
def test_sensitivity_examples(hour, factor):
    assert sensitivity_factor(hour) == factor


def test_sensitivity_ranges():
    assert [sensitivity_factor(h) for h in range(19, 25)] == [0.5] * 6
    assert [sensitivity_factor(h) for h in range(8, 13)] == [1.0] * 5
    assert {sensitivity_factor(h) for h in list(range(1, 8)) + list(range(13, 19))} == {1.25}


@pytest.mark.parametrize("hour", [0, 25, -1, 3.5])
def test_sensitivity_domain(hour):
    with pytest.raises(ValueError):
        sensitivity_factor(hour)


def test_two_hours_over_limit():
    lab = derive_labels(_place([10, 0, 0, 6, 0, 0, 0, 0], 3), np.zeros(24), 3)
    assert lab.t1_hours == 2


def test_all_zero_window_hits_floors():
    lab = derive_labels(np.zeros(24), np.zeros(24), 14)
    assert (lab.t1_hours, lab.t2_inactive_min, lab.t3_fluct, lab.t4_hour_fluct) == (2, 5.0, 1.0, 1.0)


def test_p75_interpolation():
    lab = derive_labels(_place([0, 0, 0, 0, 10, 10, 20, 40], 9), np.zeros(24), 9)
    assert lab.t2_inactive_min == pytest.approx(12.5, abs=1e-12)


def test_window_wraps_past_midnight():
    inactive = np.zeros(24)
    inactive[[22, 23, 0, 1, 2]] = 30.0  # buckets 23, 24, 1, 2, 3
    assert derive_labels(inactive, np.zeros(24), 23).t1_hours == 5


def test_brute_force_oracle_agreement():
    rng = np.random.default_rng(0)
    n = 1000
    inactive = rng.choice([0.0, 0.0, 3.0, 5.0, 7.5], size=(n, 24)) * rng.uniform(0, 8, size=(n, 24))
    inactive = np.minimum(inactive, 60.0)
    fluct = rng.poisson(0.3, size=(n, 24)).astype(float)
    hours = rng.integers(1, 25, size=n)
    got = derive_labels_batch(inactive, fluct, hours)
    for i in range(n):
        t1, t2, t3, t4 = oracle_labels(inactive[i], fluct[i], hours[i])
        assert got[i, 0] == t1
        assert abs(got[i, 1] - t2) <= 1e-9
        assert abs(got[i, 2] - t3) <= 1e-9
        assert abs(got[i, 3] - t4) <= 1e-9


_hourly = st.lists(st.floats(0, 60, allow_nan=False), min_size=24, max_size=24)


@settings(max_examples=100, deadline=None)
@given(_hourly, _hourly, st.integers(1, 24), st.floats(1.0, 10.0))
def test_label_properties(inactive, fluct, start, k):
    lab = derive_labels(inactive, np.floor(fluct), start)
    assert 2 <= lab.t1_hours <= 8
    assert lab.t2_inactive_min >= 5.0
    assert lab.t4_hour_fluct <= lab.t3_fluct
    scaled = derive_labels(np.asarray(inactive) * k, np.floor(fluct), start)
    assert scaled.t2_inactive_min >= lab.t2_inactive_min


@settings(max_examples=60, deadline=None)
@given(_hourly, st.integers(19, 24))
def test_evening_is_stricter_than_off_peak(inactive, evening):
    # same window values placed at an evening start and at an off-peak start
    window = [inactive[(evening - 1 + k) % 24] for k in range(8)]
    ev = derive_labels(_place(window, evening), np.zeros(24), evening)
    off = derive_labels(_place(window, 2), np.zeros(24), 2)
    assert ev.t2_inactive_min <= off.t2_inactive_min


def _cell_days(n_cells, n_days, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for c in range(n_cells):
        for d in range(n_days):
            out.append(
                CellDay(
                    f"c{c:03d}", dt.date(2024, 1, 1) + dt.timedelta(days=d), "X", "REG_A",
                    np.minimum(60, rng.exponential(4, 24)), rng.poisson(0.1, 24),
                )
            )
    return out


def test_labels_for_cell_days_order():
    days = _cell_days(2, 1)
    labels = labels_for_cell_days(days)
    assert labels.shape == (48, 4)
    np.testing.assert_array_equal(labels[24 + 5], derive_labels(days[1].hourly_inactive, days[1].hourly_fluct, 6).as_array())


def test_holdout_is_seeded_and_cell_level():
    cells = [f"c{i}" for i in range(400)]
    a = holdout_cells(cells, 0.15, 42)
    assert a == holdout_cells(reversed(cells), 0.15, 42)
    assert 30 < len(a) < 95
    assert a != holdout_cells(cells, 0.15, 7)


def test_ks_holdout_check_on_homogeneous_cells():
    report = ks_holdout_check(_cell_days(120, 3), 0.15, 42)
    assert report.locally_consistent
    assert report.n_holdout_cells > 0
    assert set(report.tests) == {"t1", "t2", "t3", "t4"}
    assert all(r.p_value > 0.05 for r in report.tests.values())


def test_ks_holdout_rejects_degenerate_fraction():
    with pytest.raises(ValueError):
        ks_holdout_check(_cell_days(3, 1), 0.0, 42)
