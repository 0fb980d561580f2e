import datetime as dt
import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alarmthresh.ingest import (
    SNAPSHOT_COLUMNS,
    AlarmRecord,
    CellDay,
    CellNameError,
    SnapshotParseError,
    aggregate_all,
    aggregate_cell_days,
    dedup,
    extract_cell_name,
    parse_snapshot,
    read_celldays,
    write_celldays,
)

DAY = dt.date(2024, 1, 5)


def _rec(cell, start, duration, snap=None, source="a.csv", vendor="X", region="REG_A"):
    return AlarmRecord(
        snapshot_time=snap or start + dt.timedelta(minutes=duration + 1),
        vendor=vendor,
        region=region,
        cell_id=cell,
        alarm_start=start,
        duration_min=duration,
        source_file=source,
    )


def _at(hour, minute=0, day=DAY):
    return dt.datetime.combine(day, dt.time()) + dt.timedelta(hours=hour, minutes=minute)


def _write(path, rows):
    lines = [",".join(SNAPSHOT_COLUMNS)] + [",".join(r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def _row(vendor="X", cell="NX_1042", start="2024-01-05T08:00", duration="12.5"):
    custom = f"CELL={cell};SEV=MAJ" if vendor == "X" else ""
    system = f"BSSY12-{cell}-SITE7" if vendor == "Y" else ""
    attrs = '"{""cell_name"":""%s"",""code"":41}"' % cell if vendor == "Z" else ""
    return ["s1", vendor, "REG_C", system, custom, attrs, start, duration]


def test_vendor_cell_name_grammars():
    assert extract_cell_name("X", {"alarmCustomAttr": "CELL=NX_1042;SEV=MAJ"}) == "NX_1042"
    assert extract_cell_name("Y", {"source_system_name": "BSSY12-NY_2210-SITE7"}) == "NY_2210"
    assert extract_cell_name("Z", {"alarm_attributes": '{"cell_name":"NZ_0007","code":41}'}) == "NZ_0007"


def test_vendor_z_tolerates_loose_braces():
    assert extract_cell_name("Z", {"alarm_attributes": "{cell_name: NZ_0042, code: 7}"}) == "NZ_0042"


@pytest.mark.parametrize(
    "vendor,fields",
    [("X", {}), ("X", {"alarmCustomAttr": "SEV=MAJ"}), ("Y", {"source_system_name": "short"}), ("Z", {"alarm_attributes": "{}"})],
)
def test_cell_name_errors(vendor, fields):
    with pytest.raises(CellNameError):
        extract_cell_name(vendor, fields)


def test_parse_snapshot_reads_timestamp_from_name(tmp_path):
    path = _write(
        tmp_path / "alarms_20240105_0910.csv",
        [_row("X"), _row("Y", "NY_2210"), _row("Z", "NZ_0007")],
    )
    records = parse_snapshot(path)
    assert len(records) == 3
    assert {r.snapshot_time for r in records} == {dt.datetime(2024, 1, 5, 9, 10)}
    assert [r.cell_id for r in records] == ["NX_1042", "NY_2210", "NZ_0007"]


def test_header_only_file_is_empty(tmp_path):
    assert parse_snapshot(_write(tmp_path / "alarms_20240105_0910.csv", [])) == []


def test_bad_rows_are_counted(tmp_path):
    stats = Counter()
    rows = [_row(duration="abc"), _row(vendor="Q"), _row(start="2024-01-05T10:00"), _row()]
    records = parse_snapshot(_write(tmp_path / "alarms_20240105_0910.csv", rows), stats)
    assert len(records) == 1
    assert stats["skipped"] == 3
    assert stats["unknown_vendor"] == 1


def test_missing_timestamp_token_names_the_file(tmp_path):
    path = _write(tmp_path / "alarms_latest.csv", [_row()])
    with pytest.raises(SnapshotParseError, match="alarms_latest.csv"):
        parse_snapshot(path)


def test_dedup_keeps_longest():
    start = _at(9)
    out = dedup([_rec("c", start, 5.0), _rec("c", start, 12.0)])
    assert [r.duration_min for r in out] == [12.0]


def test_dedup_tie_breaks():
    start = _at(9)
    early = _rec("c", start, 5.0, snap=_at(10), source="b.csv")
    late = _rec("c", start, 5.0, snap=_at(11), source="z.csv")
    assert dedup([early, late]) == [late]
    a = _rec("c", start, 5.0, snap=_at(11), source="b.csv")
    assert dedup([late, a]) == [a]


def test_dedup_matches_group_by_oracle():
    rng = random.Random(3)
    records = []
    for _ in range(50):
        cell = rng.choice(["a", "b", "c"])
        start = _at(rng.randrange(3))
        records.append(_rec(cell, start, float(rng.randrange(4)), snap=_at(5, rng.randrange(3)), source=f"{rng.randrange(3)}.csv"))
    groups = {}
    for r in records:
        groups.setdefault((r.cell_id, r.alarm_start), []).append(r)
    oracle = []
    for key in sorted(groups):
        ranked = sorted(groups[key], key=lambda r: (-r.duration_min, -r.snapshot_time.timestamp(), r.source_file))
        oracle.append(ranked[0])
    assert dedup(records) == oracle


def test_single_alarm_bucket():
    (cd,) = aggregate_cell_days([_rec("c", _at(9, 20), 30.0)], DAY)
    assert cd.hourly_inactive[9] == 30.0  # bucket 10 covers 09:00-10:00
    assert cd.hourly_fluct[9] == 1
    assert cd.total_fluct == 1


def test_alarm_straddling_hour_boundary():
    (cd,) = aggregate_cell_days([_rec("c", _at(9, 50), 30.0)], DAY)
    assert cd.hourly_inactive[9] == pytest.approx(10.0)
    assert cd.hourly_inactive[10] == pytest.approx(20.0)


def test_overlapping_alarms_never_exceed_an_hour():
    recs = [_rec("c", _at(9, 0), 60.0), _rec("c", _at(9, 30), 45.0)]
    (cd,) = aggregate_cell_days(recs, DAY)
    assert cd.hourly_inactive[9] == 60.0
    assert cd.hourly_inactive[10] == pytest.approx(15.0)
    assert cd.total_fluct == 2


def test_midnight_spill_goes_to_next_date():
    rec = _rec("c", _at(23, 30), 90.0)
    days = aggregate_all([rec, _rec("c", _at(5, day=DAY + dt.timedelta(days=1)), 1.0)])
    first, second = days
    assert first.hourly_inactive[23] == pytest.approx(30.0)
    assert second.hourly_inactive[0] == pytest.approx(60.0)
    assert second.hourly_fluct[0] == 0


def test_spill_past_last_date_is_dropped_with_warning(caplog):
    (cd,) = aggregate_all([_rec("c", _at(23, 30), 90.0)])
    assert cd.total_inactive_min == pytest.approx(30.0)
    assert "dropped" in caplog.text


def test_no_records_no_cells():
    assert aggregate_cell_days([], DAY) == []


def test_cellday_rejects_bad_shape():
    with pytest.raises(ValueError):
        CellDay("c", DAY, "X", "REG_A", np.zeros(23), np.zeros(24))


def test_cellday_csv_round_trip(tmp_path):
    recs = [_rec("c", _at(9, 50), 30.3), _rec("d", _at(1, 7), 0.1, vendor="Z", region="REG_I")]
    days = aggregate_cell_days(recs, DAY)
    back = read_celldays(write_celldays(tmp_path / "cd.csv", days))
    for a, b in zip(days, back):
        assert (a.cell_id, a.date, a.vendor, a.region) == (b.cell_id, b.date, b.vendor, b.region)
        np.testing.assert_array_equal(a.hourly_inactive, b.hourly_inactive)
        np.testing.assert_array_equal(a.hourly_fluct, b.hourly_fluct)


# Non-overlapping alarms per cell: (cell, start minute offset, duration)
_alarm = st.tuples(st.sampled_from("abc"), st.integers(0, 1439), st.integers(0, 200))


def _disjoint(raw):
    """Drop alarms that overlap an earlier kept alarm of the same cell."""
    kept, busy = [], {}
    for cell, start, duration in sorted(raw):
        if start >= busy.get(cell, -1):
            kept.append(_rec(cell, _at(0, start), float(duration)))
            busy[cell] = start + duration + (1 if duration == 0 else 0)
    return kept


@settings(max_examples=60, deadline=None)
@given(st.lists(_alarm, max_size=25))
def test_total_minutes_equal_clipped_durations(raw):
    recs = _disjoint(raw)
    days = aggregate_cell_days(recs, DAY)
    clipped = sum(min(r.duration_min, 1440 - (r.alarm_start - _at(0)).total_seconds() / 60) for r in recs)
    assert sum(cd.total_inactive_min for cd in days) == pytest.approx(clipped, abs=1e-6)
    assert sum(cd.total_fluct for cd in days) == len({(r.cell_id, r.alarm_start) for r in recs})
    for cd in days:
        assert (cd.hourly_inactive <= 60.0).all()


@settings(max_examples=60, deadline=None)
@given(st.lists(_alarm, max_size=25), st.randoms())
def test_dedup_idempotent_and_aggregate_order_free(raw, rnd):
    recs = [_rec(c, _at(0, s), float(d)) for c, s, d in raw]
    once = dedup(recs)
    assert dedup(once) == once
    shuffled = list(once)
    rnd.shuffle(shuffled)
    a = aggregate_cell_days(once, DAY)
    b = aggregate_cell_days(shuffled, DAY)
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert x.cell_id == y.cell_id
        np.testing.assert_allclose(x.hourly_inactive, y.hourly_inactive, atol=1e-9)
        np.testing.assert_array_equal(x.hourly_fluct, y.hourly_fluct)
