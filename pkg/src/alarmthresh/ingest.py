"""Alarm-snapshot parsing, vendor-specific cell naming, dedup and cell-day aggregation."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

log = logging.getLogger(__name__)

VENDORS = ("X", "Y", "Z")
REGIONS = tuple(f"REG_{c}" for c in "ABCDEFGHI")
SNAPSHOT_COLUMNS = (
    "snapshot_id",
    "vendor",
    "region",
    "source_system_name",
    "alarmCustomAttr",
    "alarm_attributes",
    "alarm_start",
    "duration_min",
)
CELLDAY_COLUMNS = (
    ("cell_id", "date", "vendor", "region")
    + tuple(f"inact_h{h}" for h in range(1, 25))
    + tuple(f"fluct_h{h}" for h in range(1, 25))
)
_FILENAME_TOKEN = re.compile(r"(\d{8})_(\d{4})")
# Vendor Y: cell name occupies 1-based positions 8..14 of the system name
_Y_SLICE = slice(7, 14)
_Z_KEY = re.compile(r'"?cell_name"?\s*[:=]\s*"?([^",}]+)"?')
MINUTES_PER_DAY = 1440


class SnapshotParseError(ValueError):
    pass


class CellNameError(ValueError):
    pass


@dataclass(frozen=True)
class AlarmRecord:
    snapshot_time: dt.datetime
    vendor: str
    region: str
    cell_id: str
    alarm_start: dt.datetime
    duration_min: float
    source_file: str = ""
    raw_fields: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    @property
    def alarm_end(self) -> dt.datetime:
        return self.alarm_start + dt.timedelta(minutes=self.duration_min)


@dataclass
class CellDay:
    cell_id: str
    date: dt.date
    vendor: str
    region: str
    hourly_inactive: np.ndarray  # index h-1 holds clock hour [h-1, h)
    hourly_fluct: np.ndarray

    def __post_init__(self):
        self.hourly_inactive = np.asarray(self.hourly_inactive, dtype=np.float64)
        self.hourly_fluct = np.asarray(self.hourly_fluct, dtype=np.int64)
        if self.hourly_inactive.shape != (24,) or self.hourly_fluct.shape != (24,):
            raise ValueError(f"{self.cell_id} {self.date}: hourly arrays must have 24 entries")
        if (self.hourly_inactive < 0).any() or (self.hourly_fluct < 0).any():
            raise ValueError(f"{self.cell_id} {self.date}: negative hourly values")

    @property
    def total_inactive_min(self) -> float:
        return float(self.hourly_inactive.sum())

    @property
    def total_fluct(self) -> int:
        return int(self.hourly_fluct.sum())


def snapshot_time_from_name(path) -> dt.datetime:
    name = Path(path).name
    match = _FILENAME_TOKEN.search(name)
    if match is None:
        raise SnapshotParseError(f"{name}: no YYYYMMDD_HHMM timestamp token in file name")
    try:
        return dt.datetime.strptime(match.group(1) + match.group(2), "%Y%m%d%H%M")
    except ValueError as exc:
        raise SnapshotParseError(f"{name}: garbled timestamp token {match.group(0)!r}") from exc


def extract_cell_name(vendor: str, raw_fields: dict) -> str:
    """Recover the cell identifier using the vendor's field convention."""
    if vendor == "X":
        source = raw_fields.get("alarmCustomAttr")
        if source is None:
            raise CellNameError("vendor X row lacks alarmCustomAttr")
        pairs = (part.split("=", 1) for part in source.split(";") if "=" in part)
        cell = {k.strip(): v.strip() for k, v in pairs}.get("CELL", "")
    elif vendor == "Y":
        source = raw_fields.get("source_system_name")
        if source is None:
            raise CellNameError("vendor Y row lacks source_system_name")
        cell = source[_Y_SLICE].strip()
    elif vendor == "Z":
        source = raw_fields.get("alarm_attributes")
        if source is None:
            raise CellNameError("vendor Z row lacks alarm_attributes")
        try:
            parsed = json.loads(source)
            cell = str(parsed.get("cell_name", "")).strip() if isinstance(parsed, dict) else ""
        except json.JSONDecodeError:
            match = _Z_KEY.search(source)
            cell = match.group(1).strip() if match else ""
    else:
        raise CellNameError(f"unknown vendor {vendor!r}")
    if not cell:
        raise CellNameError(f"vendor {vendor}: empty cell name")
    return cell


def parse_snapshot(path, stats: Counter | None = None) -> list[AlarmRecord]:
    """Read one snapshot CSV; bad rows are skipped and tallied in ``stats``."""
    path = Path(path)
    snapshot_time = snapshot_time_from_name(path)
    stats = Counter() if stats is None else stats
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return records
        if tuple(reader.fieldnames) != SNAPSHOT_COLUMNS:
            raise SnapshotParseError(f"{path.name}: header {reader.fieldnames} does not match schema")
        for line_no, row in enumerate(reader, start=2):
            stats["rows"] += 1
            vendor = (row.get("vendor") or "").strip()
            if vendor not in VENDORS:
                stats["unknown_vendor"] += 1
                stats["skipped"] += 1
                log.warning("%s:%d unknown vendor %r", path.name, line_no, vendor)
                continue
            try:
                record = _parse_row(row, vendor, snapshot_time, path.name)
            except (ValueError, CellNameError) as exc:
                stats["skipped"] += 1
                log.debug("%s:%d skipped: %s", path.name, line_no, exc)
                continue
            records.append(record)
            stats["parsed"] += 1
    return records


def _parse_row(row: dict, vendor: str, snapshot_time: dt.datetime, source: str) -> AlarmRecord:
    region = row["region"].strip()
    if region not in REGIONS:
        raise ValueError(f"unknown region {region!r}")
    duration = float(row["duration_min"])
    if not math.isfinite(duration) or duration < 0:
        raise ValueError(f"bad duration {duration}")
    start = dt.datetime.fromisoformat(row["alarm_start"].strip())
    if start > snapshot_time:
        raise ValueError("alarm starts after its snapshot")
    return AlarmRecord(
        snapshot_time=snapshot_time,
        vendor=vendor,
        region=region,
        cell_id=extract_cell_name(vendor, row),
        alarm_start=start,
        duration_min=duration,
        source_file=source,
        raw_fields=dict(row),
    )


def parse_snapshots(paths: Iterable, stats: Counter | None = None) -> list[AlarmRecord]:
    records = []
    for path in sorted(Path(p) for p in paths):
        records.extend(parse_snapshot(path, stats))
    return records


def dedup(records: Iterable[AlarmRecord]) -> list[AlarmRecord]:
    """Keep one record per (cell, alarm start): longest, then latest snapshot, then smallest file."""
    best: dict[tuple, AlarmRecord] = {}
    for rec in records:
        key = (rec.cell_id, rec.alarm_start)
        current = best.get(key)
        if current is None or _beats(rec, current):
            best[key] = rec
    return [best[k] for k in sorted(best)]


def _beats(a: AlarmRecord, b: AlarmRecord) -> bool:
    if a.duration_min != b.duration_min:
        return a.duration_min > b.duration_min
    if a.snapshot_time != b.snapshot_time:
        return a.snapshot_time > b.snapshot_time
    return a.source_file < b.source_file


def _merge(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    merged: list[list[float]] = []
    for s, e in sorted(intervals):
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged]


def _minutes_since(t: dt.datetime, origin: dt.datetime) -> float:
    return (t - origin).total_seconds() / 60.0


def aggregate_cell_days(records: Iterable[AlarmRecord], date: dt.date) -> list[CellDay]:
    """Hourly inactive minutes and alarm-start counts for every cell active on ``date``.

    Overlapping alarms of one cell count once (interval union), so no hour
    exceeds 60 minutes. Alarms that began the previous day contribute the part
    that falls after midnight.
    """
    origin = dt.datetime.combine(date, dt.time())
    intervals: dict[str, list] = defaultdict(list)
    starts: dict[str, list] = defaultdict(list)
    meta: dict[str, tuple[str, str]] = {}
    for rec in records:
        s = _minutes_since(rec.alarm_start, origin)
        e = s + rec.duration_min
        starts_today = 0.0 <= s < MINUTES_PER_DAY
        overlaps = s < MINUTES_PER_DAY and e > 0.0 and e > s
        if not (starts_today or overlaps):
            continue
        meta.setdefault(rec.cell_id, (rec.vendor, rec.region))
        if starts_today:
            starts[rec.cell_id].append(s)
        if overlaps:
            intervals[rec.cell_id].append((max(s, 0.0), min(e, float(MINUTES_PER_DAY))))

    out = []
    for cell in sorted(meta):
        inactive, fluct = hourly_profile(intervals.get(cell, []), starts.get(cell, []))
        vendor, region = meta[cell]
        out.append(CellDay(cell, date, vendor, region, inactive, fluct))
    return out


def hourly_profile(intervals, starts) -> tuple[np.ndarray, np.ndarray]:
    """Per-hour inactive minutes (interval union, apportioned by overlap) and start counts.

    ``intervals`` are (start, end) minutes already clipped to [0, 1440];
    ``starts`` are alarm-start minutes within the day.
    """
    inactive = np.zeros(24)
    for s, e in _merge(list(intervals)):
        for hour in range(int(s // 60), min(24, math.ceil(e / 60))):
            overlap = min(e, (hour + 1) * 60.0) - max(s, hour * 60.0)
            if overlap > 0:
                inactive[hour] += overlap
    fluct = np.zeros(24, dtype=np.int64)
    for s in starts:
        fluct[int(s // 60)] += 1
    return np.minimum(inactive, 60.0), fluct


def aggregate_all(records: list[AlarmRecord]) -> list[CellDay]:
    """Aggregate every date that has alarm starts; spill past the last date is dropped."""
    if not records:
        return []
    dates = sorted({r.alarm_start.date() for r in records})
    horizon = dt.datetime.combine(dates[-1] + dt.timedelta(days=1), dt.time())
    dropped = sum(
        max(0.0, _minutes_since(r.alarm_end, horizon)) for r in records if r.alarm_end > horizon
    )
    if dropped > 0:
        log.warning("%.1f alarm minutes fall after the last observed date and were dropped", dropped)
    by_date = _index_by_date(records)
    days = []
    for d in dates:
        days.extend(aggregate_cell_days(by_date.get(d, []), d))
    return days


def _index_by_date(records: list[AlarmRecord]) -> dict[dt.date, list[AlarmRecord]]:
    """Map each date to the records that start on or spill into it."""
    index: dict[dt.date, list[AlarmRecord]] = defaultdict(list)
    for rec in records:
        first = rec.alarm_start.date()
        last = (rec.alarm_end - dt.timedelta(microseconds=1)).date() if rec.duration_min > 0 else first
        d = first
        while d <= last:
            index[d].append(rec)
            d += dt.timedelta(days=1)
    return index


def _fmt(x: float) -> str:
    return repr(float(x))


def write_celldays(path, cell_days: Iterable[CellDay]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CELLDAY_COLUMNS)
        for cd in cell_days:
            writer.writerow(
                [cd.cell_id, cd.date.isoformat(), cd.vendor, cd.region]
                + [_fmt(v) for v in cd.hourly_inactive]
                + [str(int(v)) for v in cd.hourly_fluct]
            )
    return path


def read_celldays(path) -> list[CellDay]:
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CELLDAY_COLUMNS:
            raise ValueError(f"{path}: unexpected cell-day header")
        for row in reader:
            out.append(
                CellDay(
                    cell_id=row[0],
                    date=dt.date.fromisoformat(row[1]),
                    vendor=row[2],
                    region=row[3],
                    hourly_inactive=[float(v) for v in row[4:28]],
                    hourly_fluct=[int(v) for v in row[28:52]],
                )
            )
    return out
