"""Seeded synthetic alarm generator shaped after published network-alarm statistics.

Each cell-day gets a handful of short "blip" alarms plus, on bad days, one
long outage episode. Episodes end at a recovery anchor (crews arriving around
the morning peak hour, or the nightly reset at midnight), which produces the
two hourly peaks. Some episodes flap: the cell briefly recovers several times,
and every restart is a new alarm, which drives the fluctuation bursts.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .ingest import REGIONS, SNAPSHOT_COLUMNS, VENDORS, CellDay, hourly_profile
from .labels import labels_for_cell_days

MINUTES_PER_DAY = 1440
SNAPSHOT_EVERY_MIN = 10

# Relative regional outage levels, spanning roughly 36..113 min/day
REGION_LEVELS = dict(zip(REGIONS, (70.0, 58.0, 45.0, 113.0, 64.0, 80.0, 36.0, 52.0, 90.0)))

# Hourly weights for blip start buckets 1..24: busy around the peaks, near silent 12..18
BLIP_HOUR_WEIGHTS = (
    1.0, 0.8, 0.6, 0.5, 0.6, 1.0, 1.6, 2.6, 3.2, 3.0, 1.6, 0.5,
    0.15, 0.1, 0.1, 0.1, 0.1, 0.15, 0.3, 0.6, 0.9, 1.2, 1.6, 2.0,
)


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_cells: int = 500
    n_days: int = 10
    seed: int = 42
    start_date: dt.date = dt.date(2024, 1, 4)
    vendor_mix: tuple[float, float, float] = (0.40, 0.35, 0.25)
    vendor_mean_minutes: tuple[float, float, float] = (85.0, 49.0, 60.0)
    morning_peak_hour: int = 9
    night_peak_hour: int = 24
    weekend_multiplier: float = 4.8
    cell_spread: float = 0.3
    blip_rate: float = 0.8
    blip_median_min: float = 4.0
    blip_sigma: float = 1.0
    bad_day_rate: float = 0.13
    bad_day_cap: float = 0.95
    episode_median_min: float = 150.0
    episode_sigma: float = 0.8
    episode_length_share: float = 0.25
    morning_share: float = 0.45
    flap_prob: float = 0.6
    flap_extra_mean: float = 4.0

    def __post_init__(self):
        if self.n_cells <= 0 or self.n_days <= 0:
            raise SynthConfigError("need at least one cell and one day")
        if abs(sum(self.vendor_mix) - 1.0) > 1e-9 or min(self.vendor_mix) < 0:
            raise SynthConfigError("vendor mix must be a distribution")
        positive = (
            self.weekend_multiplier, self.blip_median_min, self.episode_median_min,
            self.bad_day_rate, self.blip_rate, *self.vendor_mean_minutes,
        )
        if min(positive) <= 0:
            raise SynthConfigError("shape knobs must be positive")
        if not 1 <= self.morning_peak_hour <= 23:
            raise SynthConfigError("morning peak hour must be in 1..23")

    @property
    def dates(self) -> list[dt.date]:
        return [self.start_date + dt.timedelta(days=k) for k in range(self.n_days)]

    @classmethod
    def from_mapping(cls, values: dict) -> "SynthConfig":
        unknown = sorted(set(values) - set(cls.__dataclass_fields__))
        if unknown:
            raise SynthConfigError(f"unknown synth options {unknown}")
        kwargs = {}
        for f in cls.__dataclass_fields__.values():
            if f.name not in values:
                continue
            raw = values[f.name]
            if f.name == "start_date":
                kwargs[f.name] = raw if isinstance(raw, dt.date) else dt.date.fromisoformat(str(raw))
            elif isinstance(f.default, tuple):
                parts = raw if isinstance(raw, (list, tuple)) else str(raw).split(",")
                kwargs[f.name] = tuple(float(p) for p in parts)
            else:
                kwargs[f.name] = type(f.default)(raw)
        return cls(**kwargs)


@dataclass(frozen=True)
class Alarm:
    start_min: int  # minutes after the day's midnight
    duration_min: float


@dataclass
class SynthCell:
    cell_id: str
    vendor: str
    region: str
    propensity: float
    days: dict[dt.date, list[Alarm]] = field(default_factory=dict)


def _cell_id(vendor: str, index: int) -> str:
    return f"N{vendor}_{index:04d}"


def _vendor_factors(cfg: SynthConfig) -> dict[str, float]:
    mean = float(np.dot(cfg.vendor_mix, cfg.vendor_mean_minutes))
    return {v: m / mean for v, m in zip(VENDORS, cfg.vendor_mean_minutes)}


def _region_factors() -> dict[str, float]:
    mean = float(np.mean(list(REGION_LEVELS.values())))
    return {r: v / mean for r, v in REGION_LEVELS.items()}


def _free_minutes(rng, taken: set[int], lo: int, hi: int, k: int) -> list[int]:
    """Up to k distinct minutes in [lo, hi) not already used by this cell-day."""
    pool = [m for m in range(max(0, lo), min(MINUTES_PER_DAY, hi)) if m not in taken]
    if not pool:
        return []
    picks = rng.choice(len(pool), size=min(k, len(pool)), replace=False)
    out = sorted(pool[i] for i in picks)
    taken.update(out)
    return out


def _round_duration(x: float) -> float:
    return float(np.round(max(x, 0.1), 1))


def _episode(rng, cfg: SynthConfig, taken: set[int], scale: float) -> list[Alarm]:
    duration = float(rng.lognormal(np.log(cfg.episode_median_min * scale), cfg.episode_sigma))
    if rng.random() < cfg.morning_share:
        end = cfg.morning_peak_hour * 60 + int(rng.integers(0, 21))
    else:
        end = cfg.night_peak_hour * 60
        duration = min(duration, 360.0)  # night episodes stay after 18:00
    start = max(0, int(round(end - duration)))
    if end - start < 2:
        start = end - 2
    if rng.random() >= cfg.flap_prob:
        (s,) = _free_minutes(rng, taken, start, start + 1, 1) or [None]
        if s is None:
            return []
        return [Alarm(s, _round_duration(end - s))]
    k = 1 + int(rng.poisson(cfg.flap_extra_mean))
    starts = _free_minutes(rng, taken, start, end - 1, k)
    alarms = []
    for i, s in enumerate(starts):
        stop = starts[i + 1] - float(rng.uniform(0.5, 3.0)) if i + 1 < len(starts) else float(end)
        alarms.append(Alarm(s, _round_duration(min(stop, end) - s)))
    return alarms


def _day_alarms(rng, cfg: SynthConfig, intensity: float, weights: np.ndarray) -> list[Alarm]:
    taken: set[int] = set()
    alarms: list[Alarm] = []
    # intensity acts partly through how often episodes happen and partly through their length
    longer = intensity**cfg.episode_length_share
    if rng.random() < min(cfg.bad_day_cap, cfg.bad_day_rate * intensity / longer):
        alarms.extend(_episode(rng, cfg, taken, longer))
    n_blips = 1 + int(rng.poisson(cfg.blip_rate))
    hours = rng.choice(24, size=n_blips, p=weights)
    for h in hours:
        picked = _free_minutes(rng, taken, h * 60, h * 60 + 60, 1)
        if not picked:
            continue
        s = picked[0]
        duration = float(rng.lognormal(np.log(cfg.blip_median_min * intensity), cfg.blip_sigma))
        alarms.append(Alarm(s, _round_duration(min(duration, MINUTES_PER_DAY - s))))
    return sorted(alarms, key=lambda a: a.start_min)


def generate_cells(cfg: SynthConfig) -> Iterator[SynthCell]:
    """Cells in index order; each draws from its own sub-seed so generation is order-free."""
    vendor_f = _vendor_factors(cfg)
    region_f = _region_factors()
    weights = np.asarray(BLIP_HOUR_WEIGHTS) / np.sum(BLIP_HOUR_WEIGHTS)
    dates = cfg.dates
    for index in range(cfg.n_cells):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
        vendor = VENDORS[int(rng.choice(3, p=cfg.vendor_mix))]
        region = REGIONS[int(rng.integers(0, len(REGIONS)))]
        propensity = float(rng.lognormal(-0.5 * cfg.cell_spread**2, cfg.cell_spread))
        cell = SynthCell(_cell_id(vendor, index), vendor, region, propensity)
        for date in dates:
            intensity = vendor_f[vendor] * region_f[region] * propensity
            if date.weekday() >= 5:
                intensity *= cfg.weekend_multiplier
            cell.days[date] = _day_alarms(rng, cfg, intensity, weights)
        yield cell


def cell_days_from_cells(cells) -> list[CellDay]:
    out = []
    for cell in cells:
        for date, alarms in cell.days.items():
            intervals = [(float(a.start_min), a.start_min + a.duration_min) for a in alarms]
            inactive, fluct = hourly_profile(intervals, [a.start_min for a in alarms])
            out.append(CellDay(cell.cell_id, date, cell.vendor, cell.region, inactive, fluct))
    return sorted(out, key=lambda c: (c.date, c.cell_id))


def generate_cell_days(cfg: SynthConfig) -> list[CellDay]:
    return cell_days_from_cells(generate_cells(cfg))


def _vendor_fields(cell: SynthCell, index: int) -> dict[str, str]:
    fields = {"source_system_name": "", "alarmCustomAttr": "", "alarm_attributes": ""}
    if cell.vendor == "X":
        fields["alarmCustomAttr"] = f"CELL={cell.cell_id};SEV=MAJ"
    elif cell.vendor == "Y":
        fields["source_system_name"] = f"BSSY{index % 100:02d}-{cell.cell_id}-SITE{index % 10}"
    else:
        fields["alarm_attributes"] = json.dumps({"cell_name": cell.cell_id, "code": 41}, separators=(",", ":"))
    return fields


def write_snapshots(cfg: SynthConfig, out_dir) -> list[Path]:
    """Write 10-minute snapshot files listing every active alarm with its elapsed duration.

    The first snapshot after an alarm clears still lists it once with its final
    duration, so deduplication by longest duration recovers the true length.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    origin = dt.datetime.combine(cfg.start_date, dt.time())
    n_snaps = cfg.n_days * MINUTES_PER_DAY // SNAPSHOT_EVERY_MIN + 1
    rows: list[list[tuple]] = [[] for _ in range(n_snaps)]
    for index, cell in enumerate(generate_cells(cfg)):
        fields = _vendor_fields(cell, index)
        for day_idx, (date, alarms) in enumerate(cell.days.items()):
            for a in alarms:
                start = day_idx * MINUTES_PER_DAY + a.start_min
                end = start + a.duration_min
                first = -(-start // SNAPSHOT_EVERY_MIN)
                k = first
                while k * SNAPSHOT_EVERY_MIN < end and k < n_snaps:
                    rows[k].append((cell, fields, start, float(k * SNAPSHOT_EVERY_MIN - start)))
                    k += 1
                if k < n_snaps:
                    rows[k].append((cell, fields, start, a.duration_min))
    paths = []
    for k, snap_rows in enumerate(rows):
        when = origin + dt.timedelta(minutes=k * SNAPSHOT_EVERY_MIN)
        path = out_dir / f"alarms_{when:%Y%m%d_%H%M}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SNAPSHOT_COLUMNS)
            for i, (cell, fields, start, duration) in enumerate(snap_rows):
                start_ts = origin + dt.timedelta(minutes=start)
                writer.writerow(
                    [f"S{k:05d}-{i:05d}", cell.vendor, cell.region, fields["source_system_name"],
                     fields["alarmCustomAttr"], fields["alarm_attributes"],
                     start_ts.strftime("%Y-%m-%dT%H:%M"), repr(duration)]
                )
        paths.append(path)
    return paths


def distribution_audit(cell_days) -> dict[str, float | list[float]]:
    """Summary statistics of daily inactive minutes and fluctuation counts."""
    if not cell_days:
        raise ValueError("audit needs at least one cell-day")
    totals = np.array([cd.total_inactive_min for cd in cell_days])
    flucts = np.array([cd.total_fluct for cd in cell_days], dtype=np.float64)
    hourly = np.stack([cd.hourly_inactive for cd in cell_days])
    weekend = np.array([cd.date.weekday() >= 5 for cd in cell_days])
    labels = labels_for_cell_days(cell_days)
    weekday_mean = totals[~weekend].mean() if (~weekend).any() else 0.0
    weekend_mean = totals[weekend].mean() if weekend.any() else 0.0
    by_vendor = {v: float(totals[[cd.vendor == v for cd in cell_days]].mean()) for v in VENDORS if any(cd.vendor == v for cd in cell_days)}
    return {
        "n_cell_days": len(cell_days),
        "inactive_median": float(np.median(totals)),
        "inactive_p75": float(np.percentile(totals, 75)),
        "inactive_p90": float(np.percentile(totals, 90)),
        "inactive_max": float(totals.max()),
        "fluct_median": float(np.median(flucts)),
        "fluct_p75": float(np.percentile(flucts, 75)),
        "fluct_p90": float(np.percentile(flucts, 90)),
        "fluct_max": float(flucts.max()),
        "inactive_floor_share": float(np.mean(totals <= 15.0)),
        "fluct_floor_share": float(np.mean(flucts <= 1.0)),
        "fluct_label_floor_share": float(np.mean(labels[:, 2] == 1.0)) if labels.size else 0.0,
        "weekday_mean_inactive": float(weekday_mean),
        "weekend_mean_inactive": float(weekend_mean),
        "weekend_ratio": float(weekend_mean / weekday_mean) if weekday_mean > 0 else 0.0,
        "hourly_mean_inactive": [float(v) for v in hourly.mean(axis=0)],
        "vendor_mean_inactive": by_vendor,
    }


def top_hours(profile, k: int = 2) -> set[int]:
    """1-based hours of the k largest values."""
    order = np.argsort(-np.asarray(profile), kind="stable")
    return {int(i) + 1 for i in order[:k]}
