"""The 123-feature contract: catalogue, per-sample construction, start-hour expansion, scaling."""

from __future__ import annotations

import datetime as dt
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .ingest import REGIONS, VENDORS, CellDay

BLOCKS = {"night": (1, 6), "morning": (7, 11), "afternoon": (12, 17), "evening": (18, 24)}
INACTIVE_HOUR_LIMIT = 5.0


def _catalogue() -> dict[str, list[str]]:
    temporal = [f"dow_{d}" for d in range(7)] + [
        "is_weekend",
        "start_hour_sin",
        "start_hour_cos",
        "dow_sin",
        "dow_cos",
        "start_hour_frac",
    ]
    hourly = [f"inact_log_h{h}" for h in range(1, 25)] + [f"fluct_log_h{h}" for h in range(1, 25)]
    blocks = [
        f"{kind}_{block}_{stat}"
        for block in BLOCKS
        for kind in ("inact", "fluct")
        for stat in ("sum", "mean", "max")
    ] + ["inact_share_morning", "inact_share_evening", "inact_share_night"]
    peak = []
    for kind in ("inact", "fluct"):
        peak += [f"{kind}_peak_sin", f"{kind}_peak_cos", f"{kind}_peak_log_value"]
    peak += ["inact_top1_share", "inact_top3_share", "fluct_top1_share", "fluct_top3_share"]
    peak += ["inact_hours_over_5", "fluct_hours_active", "inact_morning_peak", "fluct_morning_peak"]
    lag = ["lag_prev_inact_total", "lag_prev_fluct_total", "lag_roll3_inact_mean", "lag_roll3_fluct_mean"]
    onehot = [f"vendor_{v}" for v in VENDORS] + [f"region_{r}" for r in REGIONS]
    onehot += ["trend", "trend_lower", "trend_upper", "trend_interval_width", "trend_slope"]
    return {
        "temporal": temporal,
        "hourly": hourly,
        "blocks": blocks,
        "peak": peak,
        "lag": lag,
        "onehot_trend": onehot,
    }


CATEGORIES = _catalogue()
CATEGORY_SIZES = {k: len(v) for k, v in CATEGORIES.items()}
FEATURE_NAMES: tuple[str, ...] = tuple(name for names in CATEGORIES.values() for name in names)
N_FEATURES = len(FEATURE_NAMES)
_POS = {name: i for i, name in enumerate(FEATURE_NAMES)}
HOURLY_INDEX = np.array([_POS[n] for n in CATEGORIES["hourly"]])
CONTEXT_INDEX = np.array([i for i in range(N_FEATURES) if i not in set(HOURLY_INDEX.tolist())])
START_HOUR_COLUMNS = ("start_hour_sin", "start_hour_cos", "start_hour_frac")
BINARY_FEATURES = frozenset(
    [f"dow_{d}" for d in range(7)]
    + ["is_weekend", "inact_morning_peak", "fluct_morning_peak"]
    + [f"vendor_{v}" for v in VENDORS]
    + [f"region_{r}" for r in REGIONS]
)
BINARY_MASK = np.array([n in BINARY_FEATURES for n in FEATURE_NAMES])
KEY_COLUMNS = ("cell_id", "date", "start_hour")
LABEL_COLUMNS = ("t1", "t2", "t3", "t4")


def log_transform(x):
    """ln(1 + x) for non-negative input."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("log_transform expects non-negative values")
    out = np.log1p(arr)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TrendFeatures:
    trend: float
    trend_lower: float
    trend_upper: float
    interval_width: float
    trend_slope: float

    def as_array(self) -> np.ndarray:
        return np.array([self.trend, self.trend_lower, self.trend_upper, self.interval_width, self.trend_slope])


@dataclass(frozen=True)
class TrendFit:
    """Least-squares line through daily totals, with a Gaussian residual band."""

    origin: dt.date
    intercept: float
    slope: float
    residual_std: float
    fit_dates: tuple[dt.date, ...]

    def at(self, date: dt.date) -> TrendFeatures:
        level = self.intercept + self.slope * (date - self.origin).days
        half = 1.96 * self.residual_std
        return TrendFeatures(level, level - half, level + half, 2 * half, self.slope)


def fit_trend(daily_totals: Mapping[dt.date, float]) -> TrendFit:
    if not daily_totals:
        raise ValueError("trend fit needs at least one date")
    dates = tuple(sorted(daily_totals))
    y = np.array([daily_totals[d] for d in dates], dtype=np.float64)
    if len(dates) < 2:
        return TrendFit(dates[0], float(y[0]), 0.0, 0.0, dates)
    x = np.array([(d - dates[0]).days for d in dates], dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (intercept + slope * x)
    dof = len(dates) - 2
    std = math.sqrt(float(resid @ resid) / dof) if dof > 0 else 0.0
    return TrendFit(dates[0], float(intercept), float(slope), std, dates)


def estimate_trend(daily_totals: Mapping[dt.date, float], target_date: dt.date) -> TrendFeatures:
    return fit_trend(daily_totals).at(target_date)


def network_daily_totals(cell_days: Iterable[CellDay], dates: Iterable[dt.date] | None = None) -> dict:
    """Mean total inactive minutes per cell for each date (optionally restricted to ``dates``)."""
    keep = None if dates is None else set(dates)
    sums: dict[dt.date, list[float]] = defaultdict(list)
    for cd in cell_days:
        if keep is None or cd.date in keep:
            sums[cd.date].append(cd.total_inactive_min)
    return {d: float(np.mean(v)) for d, v in sorted(sums.items())}


@dataclass
class FeatureVector:
    values: np.ndarray
    cell_id: str
    date: dt.date
    start_hour: int
    context_slice: np.ndarray = field(default_factory=lambda: CONTEXT_INDEX, repr=False)
    hourly_slice: np.ndarray = field(default_factory=lambda: HOURLY_INDEX, repr=False)

    @property
    def context(self) -> np.ndarray:
        return self.values[self.context_slice]

    @property
    def hourly(self) -> np.ndarray:
        return self.values[self.hourly_slice]


def _peak_stats(values: np.ndarray) -> tuple[list[float], float, float, bool]:
    total = values.sum()
    if total <= 0:
        return [0.0, 0.0, 0.0], 0.0, 0.0, False
    hour = int(np.argmax(values)) + 1  # first maximum wins ties
    angle = 2 * math.pi * hour / 24
    top = np.sort(values)[::-1]
    morning = BLOCKS["morning"][0] <= hour <= BLOCKS["morning"][1]
    return [math.sin(angle), math.cos(angle), math.log1p(top[0])], top[0] / total, top[:3].sum() / total, morning


def _history_stats(cell_day: CellDay, history: Sequence[CellDay]) -> list[float]:
    by_date = {h.date: h for h in history if h.date < cell_day.date}
    prev = by_date.get(cell_day.date - dt.timedelta(days=1))
    recent = [by_date[d] for d in (cell_day.date - dt.timedelta(days=k) for k in (1, 2, 3)) if d in by_date]
    prev_inact = prev.total_inactive_min if prev else 0.0
    prev_fluct = prev.total_fluct if prev else 0.0
    roll_inact = float(np.mean([h.total_inactive_min for h in recent])) if recent else 0.0
    roll_fluct = float(np.mean([h.total_fluct for h in recent])) if recent else 0.0
    return [math.log1p(v) for v in (prev_inact, prev_fluct, roll_inact, roll_fluct)]


def day_features(cell_day: CellDay, history: Sequence[CellDay], trend: TrendFeatures) -> np.ndarray:
    """All 123 features with the start-hour columns left at zero."""
    if cell_day.vendor not in VENDORS or cell_day.region not in REGIONS:
        raise ValueError(f"{cell_day.cell_id}: unknown vendor or region")
    inact = np.asarray(cell_day.hourly_inactive, dtype=np.float64)
    fluct = np.asarray(cell_day.hourly_fluct, dtype=np.float64)
    if inact.shape != (24,) or fluct.shape != (24,) or (inact < 0).any() or (fluct < 0).any():
        raise ValueError(f"{cell_day.cell_id}: malformed hourly arrays")

    dow = cell_day.date.weekday()
    temporal = [float(d == dow) for d in range(7)] + [float(dow >= 5), 0.0, 0.0]
    temporal += [math.sin(2 * math.pi * dow / 7), math.cos(2 * math.pi * dow / 7), 0.0]

    hourly = list(np.log1p(inact)) + list(np.log1p(fluct))

    blocks = []
    block_inact = {}
    for name, (lo, hi) in BLOCKS.items():
        for kind, arr in (("inact", inact), ("fluct", fluct)):
            seg = arr[lo - 1 : hi]
            blocks += [math.log1p(seg.sum()), math.log1p(seg.mean()), math.log1p(seg.max())]
            if kind == "inact":
                block_inact[name] = seg.sum()
    total_inact = inact.sum()
    for name in ("morning", "evening", "night"):
        blocks.append(block_inact[name] / total_inact if total_inact > 0 else 0.0)

    i_peak, i_top1, i_top3, i_morning = _peak_stats(inact)
    f_peak, f_top1, f_top3, f_morning = _peak_stats(fluct)
    peak = i_peak + f_peak + [i_top1, i_top3, f_top1, f_top3]
    peak += [float((inact > INACTIVE_HOUR_LIMIT).sum()), float((fluct >= 1).sum()), float(i_morning), float(f_morning)]

    lag = _history_stats(cell_day, history)
    onehot = [float(cell_day.vendor == v) for v in VENDORS] + [float(cell_day.region == r) for r in REGIONS]
    onehot += list(trend.as_array())

    values = np.array(temporal + hourly + blocks + peak + lag + onehot, dtype=np.float64)
    assert values.size == N_FEATURES
    return values


_SH = [_POS[c] for c in START_HOUR_COLUMNS]


def start_hour_columns(start_hours) -> np.ndarray:
    h = np.asarray(start_hours, dtype=np.float64)
    angle = 2 * np.pi * h / 24
    return np.stack([np.sin(angle), np.cos(angle), h / 24], axis=-1)


def _validate_hour(start_hour: int) -> int:
    if int(start_hour) != start_hour or not 1 <= start_hour <= 24:
        raise ValueError(f"start hour {start_hour} outside 1..24")
    return int(start_hour)


def build_feature_vector(
    cell_day: CellDay, start_hour: int, history: Sequence[CellDay], trend: TrendFeatures
) -> FeatureVector:
    hour = _validate_hour(start_hour)
    values = day_features(cell_day, history, trend)
    values[_SH] = start_hour_columns(hour)
    return FeatureVector(values, cell_day.cell_id, cell_day.date, hour)


def expand_start_hours(cell_day: CellDay, history: Sequence[CellDay], trend: TrendFeatures) -> list[FeatureVector]:
    base = day_features(cell_day, history, trend)
    out = []
    for hour in range(1, 25):
        values = base.copy()
        values[_SH] = start_hour_columns(hour)
        out.append(FeatureVector(values, cell_day.cell_id, cell_day.date, hour))
    return out


def _sorted_history(cell_days: Sequence[CellDay]) -> dict[str, list[CellDay]]:
    by_cell: dict[str, list[CellDay]] = defaultdict(list)
    for cd in cell_days:
        by_cell[cd.cell_id].append(cd)
    for days in by_cell.values():
        days.sort(key=lambda c: c.date)
    return by_cell


def build_feature_matrix(cell_days: Sequence[CellDay], trend_fit: TrendFit) -> tuple[np.ndarray, list[tuple]]:
    """Raw (unscaled) features for every cell-day at all 24 start hours, cell-day-major.

    Returns the (24·N, 123) matrix and the (cell_id, date, start_hour) keys.
    History for lag features comes from earlier dates of the same cell in ``cell_days``.
    """
    by_cell = _sorted_history(cell_days)
    base = np.empty((len(cell_days), N_FEATURES))
    for i, cd in enumerate(cell_days):
        days = by_cell[cd.cell_id]
        base[i] = day_features(cd, [h for h in days if h.date < cd.date], trend_fit.at(cd.date))
    X = np.repeat(base, 24, axis=0)
    hours = np.tile(np.arange(1, 25), len(cell_days))
    X[:, _SH] = start_hour_columns(hours)
    keys = [(cd.cell_id, cd.date, h) for cd in cell_days for h in range(1, 25)]
    return X, keys


class ScalerStateError(RuntimeError):
    pass


@dataclass
class Scaler:
    """Column standardization fitted on training rows; binary columns pass through."""

    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    passthrough: np.ndarray | None = None
    min_std: float = 1e-8

    @property
    def fitted(self) -> bool:
        return self.mean is not None

    @property
    def n_features(self) -> int:
        return 0 if self.mean is None else self.mean.size

    def fit(self, X: np.ndarray, passthrough: np.ndarray | None = None) -> "Scaler":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("scaler needs a non-empty 2-D array")
        self.passthrough = np.zeros(X.shape[1], bool) if passthrough is None else np.asarray(passthrough, bool)
        # exactly constant columns centre on their own value so they scale to exact zeros
        centre = np.where(np.ptp(X, axis=0) == 0, X[0], X.mean(axis=0))
        self.mean = np.where(self.passthrough, 0.0, centre)
        self.std = np.where(self.passthrough, 1.0, np.maximum(X.std(axis=0), self.min_std))
        return self

    def _check(self, X):
        if not self.fitted:
            raise ScalerStateError("scaler has not been fitted")
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.n_features:
            raise ValueError(f"expected {self.n_features} columns, got {X.shape[-1]}")
        return X

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = self._check(X)
        return (X - self.mean) / self.std

    def inverse_transform(self, Z: np.ndarray) -> np.ndarray:
        Z = self._check(Z)
        return Z * self.std + self.mean


def fit_scaler(train_vectors: np.ndarray) -> Scaler:
    return Scaler().fit(train_vectors, BINARY_MASK if np.shape(train_vectors)[-1] == N_FEATURES else None)


def apply_scaler(scaler: Scaler, vectors: np.ndarray) -> np.ndarray:
    return scaler.transform(vectors)


def split_by_date(dates: Sequence[dt.date], n_test_dates: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices of train and test samples; test holds the ``n_test_dates`` latest distinct dates."""
    if n_test_dates < 0:
        raise ValueError("n_test_dates must be non-negative")
    distinct = sorted(set(dates))
    if n_test_dates and len(distinct) < n_test_dates + 1:
        raise ValueError(f"need at least {n_test_dates + 1} distinct dates, found {len(distinct)}")
    test_dates = set(distinct[len(distinct) - n_test_dates :]) if n_test_dates else set()
    is_test = np.array([d in test_dates for d in dates], dtype=bool)
    return np.flatnonzero(~is_test), np.flatnonzero(is_test)


@dataclass
class FeatureSet:
    """Scaled feature matrix with keys and the provenance of every fitted statistic."""

    X: np.ndarray
    keys: list[tuple]
    scaler: Scaler
    trend_fit: TrendFit
    train_dates: tuple[dt.date, ...]
    test_dates: tuple[dt.date, ...]

    @property
    def dates(self) -> list[dt.date]:
        return [k[1] for k in self.keys]

    @property
    def start_hours(self) -> np.ndarray:
        return np.array([k[2] for k in self.keys])


def build_feature_set(cell_days: Sequence[CellDay], n_test_dates: int) -> FeatureSet:
    """Split by date, fit trend and scaler on training dates only, then build and scale all rows."""
    cell_days = sorted(cell_days, key=lambda c: (c.date, c.cell_id))
    _, test_idx = split_by_date([cd.date for cd in cell_days], n_test_dates)
    test_dates = tuple(sorted({cell_days[i].date for i in test_idx}))
    train_dates = tuple(sorted({cd.date for cd in cell_days} - set(test_dates)))
    trend_fit = fit_trend(network_daily_totals(cell_days, train_dates))
    X, keys = build_feature_matrix(cell_days, trend_fit)
    train_set = set(train_dates)
    train_rows = np.array([k[1] in train_set for k in keys])
    scaler = fit_scaler(X[train_rows])
    return FeatureSet(scaler.transform(X), keys, scaler, trend_fit, train_dates, test_dates)


FLOAT_FORMAT = "%.10g"


def feature_frame(X: np.ndarray, keys: Sequence[tuple], labels: np.ndarray | None = None) -> pd.DataFrame:
    frame = pd.DataFrame(np.asarray(X), columns=list(FEATURE_NAMES))
    frame["cell_id"] = [k[0] for k in keys]
    frame["date"] = [k[1].isoformat() for k in keys]
    frame["start_hour"] = [int(k[2]) for k in keys]
    if labels is not None:
        for j, name in enumerate(LABEL_COLUMNS):
            frame[name] = np.asarray(labels)[:, j]
    return frame


def write_feature_csv(path, X: np.ndarray, keys: Sequence[tuple], labels: np.ndarray | None = None):
    frame = feature_frame(X, keys, labels)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_feature_csv(path) -> tuple[np.ndarray, list[tuple], np.ndarray | None]:
    """Returns features, keys and labels (None when the file has no label columns)."""
    frame = pd.read_csv(path, dtype={"cell_id": str, "date": str})
    missing = [c for c in FEATURE_NAMES + KEY_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {missing[:5]}")
    if list(frame.columns[:N_FEATURES]) != list(FEATURE_NAMES):
        raise ValueError(f"{path}: feature columns out of order")
    X = frame[list(FEATURE_NAMES)].to_numpy(dtype=np.float64)
    keys = [
        (c, dt.date.fromisoformat(d), int(h))
        for c, d, h in zip(frame["cell_id"], frame["date"], frame["start_hour"])
    ]
    labels = frame[list(LABEL_COLUMNS)].to_numpy(dtype=np.float64) if "t1" in frame.columns else None
    return X, keys, labels
