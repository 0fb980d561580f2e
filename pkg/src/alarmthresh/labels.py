"""Percentile-rule threshold labels and the holdout consistency check."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .stats import KSResult, ks_two_sample

WINDOW_HOURS = 8
INACTIVE_HOUR_LIMIT = 5.0
T1_RANGE = (2, 8)
T2_FLOOR = 5.0
FLUCT_FLOOR = 1.0
TARGETS = ("t1", "t2", "t3", "t4")

# Bucket h covers clock [h-1, h): starts 18:00-23:00 are buckets 19..24, 07:00-11:00 are 8..12
_FACTORS = np.full(25, 1.25)
_FACTORS[19:25] = 0.5
_FACTORS[8:13] = 1.0
_FACTORS[0] = np.nan


@dataclass(frozen=True)
class ThresholdLabels:
    t1_hours: int
    t2_inactive_min: float
    t3_fluct: float
    t4_hour_fluct: float

    def as_array(self) -> np.ndarray:
        return np.array([self.t1_hours, self.t2_inactive_min, self.t3_fluct, self.t4_hour_fluct], dtype=np.float64)


def _check_hours(hours: np.ndarray) -> np.ndarray:
    hours = np.asarray(hours)
    if not np.issubdtype(hours.dtype, np.integer):
        if not np.all(np.equal(np.mod(hours, 1), 0)):
            raise ValueError("start hour must be an integer")
        hours = hours.astype(np.int64)
    if np.any((hours < 1) | (hours > 24)):
        raise ValueError(f"start hour outside 1..24: {hours[(hours < 1) | (hours > 24)][:5]}")
    return hours


def sensitivity_factor(start_hour) -> float:
    """Threshold multiplier: stricter in the evening, looser off-peak."""
    return float(_FACTORS[int(_check_hours(np.asarray(start_hour)))])


def sensitivity_factors(start_hours) -> np.ndarray:
    return _FACTORS[_check_hours(np.asarray(start_hours))]


def window_indices(start_hour: int) -> np.ndarray:
    """0-based array indices of the 8 buckets starting at ``start_hour``, wrapping past 24."""
    return (np.arange(WINDOW_HOURS) + int(start_hour) - 1) % 24


def derive_labels(hourly_inactive, hourly_fluct, start_hour: int) -> ThresholdLabels:
    t = derive_labels_batch(
        np.asarray(hourly_inactive, dtype=np.float64)[None, :],
        np.asarray(hourly_fluct, dtype=np.float64)[None, :],
        np.array([start_hour]),
    )[0]
    return ThresholdLabels(int(t[0]), float(t[1]), float(t[2]), float(t[3]))


def derive_labels_batch(inactive: np.ndarray, fluct: np.ndarray, start_hours) -> np.ndarray:
    """Labels for N (day, start hour) pairs; returns an (N, 4) array of t1..t4."""
    inactive = np.asarray(inactive, dtype=np.float64)
    fluct = np.asarray(fluct, dtype=np.float64)
    hours = _check_hours(np.asarray(start_hours).reshape(-1))
    if inactive.shape != (hours.size, 24) or fluct.shape != (hours.size, 24):
        raise ValueError("expected (N, 24) hourly arrays matching the start hours")
    idx = (hours[:, None] - 1 + np.arange(WINDOW_HOURS)[None, :]) % 24
    win_inactive = np.take_along_axis(inactive, idx, axis=1)
    win_fluct = np.take_along_axis(fluct, idx, axis=1)
    out = np.empty((hours.size, 4))
    out[:, 0] = np.clip((win_inactive > INACTIVE_HOUR_LIMIT).sum(axis=1), *T1_RANGE)
    out[:, 1] = np.maximum(T2_FLOOR, np.percentile(win_inactive, 75, axis=1) * _FACTORS[hours])
    p90 = np.maximum(FLUCT_FLOOR, np.percentile(win_fluct, 90, axis=1))
    # t4 shares the window-P90 rule with t3
    out[:, 2] = p90
    out[:, 3] = p90
    return out


def labels_for_cell_days(cell_days: Sequence) -> np.ndarray:
    """Labels for every cell-day at all 24 start hours, cell-day-major; shape (24·N, 4)."""
    if not cell_days:
        return np.zeros((0, 4))
    inactive = np.repeat(np.stack([cd.hourly_inactive for cd in cell_days]), 24, axis=0)
    fluct = np.repeat(np.stack([cd.hourly_fluct for cd in cell_days]), 24, axis=0)
    hours = np.tile(np.arange(1, 25), len(cell_days))
    return derive_labels_batch(inactive, fluct, hours)


def holdout_cells(cell_ids, fraction: float, seed: int) -> set[str]:
    """Deterministic cell-level holdout chosen by a seeded hash of the cell id."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("holdout fraction must lie strictly between 0 and 1")
    chosen = set()
    for cell in sorted(set(cell_ids)):
        digest = hashlib.blake2b(f"{seed}:{cell}".encode(), digest_size=8).digest()
        if int.from_bytes(digest, "big") / 2**64 < fraction:
            chosen.add(cell)
    return chosen


@dataclass(frozen=True)
class HoldoutReport:
    n_holdout_cells: int
    n_rest_cells: int
    locally_consistent: bool
    tests: dict[str, KSResult]


def ks_holdout_check(cell_days: Sequence, holdout_fraction: float = 0.15, seed: int = 42) -> HoldoutReport:
    """Compare label distributions of held-out cells against the remaining cells.

    Also confirms that labels of the remaining cells do not change when the
    held-out cells are removed, which holds because the rule only looks at
    one cell-day at a time.
    """
    cells = {cd.cell_id for cd in cell_days}
    held = holdout_cells(cells, holdout_fraction, seed)
    if not held or held == cells:
        raise ValueError("holdout split left one side empty")
    rest_days = [cd for cd in cell_days if cd.cell_id not in held]
    held_days = [cd for cd in cell_days if cd.cell_id in held]
    full = labels_for_cell_days(cell_days)
    mask = np.repeat([cd.cell_id not in held for cd in cell_days], 24)
    rest = labels_for_cell_days(rest_days)
    held_labels = labels_for_cell_days(held_days)
    tests = {name: ks_two_sample(held_labels[:, j], rest[:, j]) for j, name in enumerate(TARGETS)}
    return HoldoutReport(len(held), len(cells) - len(held), bool(np.array_equal(full[mask], rest)), tests)
