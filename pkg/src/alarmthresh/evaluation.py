"""Error metrics, the mean-threshold baseline, paired comparisons and report files."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .stats import wilcoxon_signed_rank

TARGETS = ("t1", "t2", "t3", "t4")
UNDEFINED = "undefined"


@dataclass(frozen=True)
class Metrics:
    mae: float
    rmse: float
    r2: float | None  # None when the target is constant but predictions miss it

    def r2_text(self, fmt: str = "{:.4f}") -> str:
        return UNDEFINED if self.r2 is None else fmt.format(self.r2)


def metrics(y, y_hat) -> Metrics:
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.size == 0 or y.shape != y_hat.shape:
        raise ValueError("metrics need equal-length non-empty vectors")
    resid = y - y_hat
    sse = float(resid @ resid)
    centred = y - y.mean()
    sst = float(centred @ centred)
    if sst > 0:
        r2 = 1.0 - sse / sst
    else:
        r2 = 0.0 if sse == 0 else None
    return Metrics(float(np.mean(np.abs(resid))), float(np.sqrt(sse / y.size)), r2)


def per_target_metrics(labels: np.ndarray, preds: np.ndarray) -> list[Metrics]:
    labels, preds = np.asarray(labels), np.asarray(preds)
    return [metrics(labels[:, j], preds[:, j]) for j in range(labels.shape[1])]


def average_metrics(rows: list[Metrics]) -> Metrics:
    r2s = [m.r2 for m in rows]
    r2 = None if any(r is None for r in r2s) else float(np.mean(r2s))
    return Metrics(float(np.mean([m.mae for m in rows])), float(np.mean([m.rmse for m in rows])), r2)


def per_sample_error(pred, label) -> np.ndarray:
    """Mean absolute error over the four targets, one value per sample."""
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if pred.shape != label.shape or pred.shape[-1] != 4:
        raise ValueError("expected matching (..., 4) prediction and label arrays")
    return np.mean(np.abs(pred - label), axis=-1)


def naive_baseline(train_labels, test_labels) -> tuple[np.ndarray, list[Metrics]]:
    """Predict every target's training mean for all test samples."""
    train_labels = np.asarray(train_labels, dtype=np.float64)
    test_labels = np.asarray(test_labels, dtype=np.float64)
    if train_labels.size == 0 or test_labels.size == 0:
        raise ValueError("baseline needs non-empty train and test labels")
    preds = np.broadcast_to(train_labels.mean(axis=0), test_labels.shape).copy()
    return preds, per_target_metrics(test_labels, preds)


def _best(values: list[float | None], higher_is_better: bool) -> set[int]:
    valid = [(i, v) for i, v in enumerate(values) if v is not None]
    if not valid:
        return set()
    target = max(v for _, v in valid) if higher_is_better else min(v for _, v in valid)
    return {i for i, v in valid if v == target}


def comparison_rows(tables: Mapping[str, list[Metrics]]) -> list[dict]:
    """One row per (target, metric) with a value per model and the best model(s)."""
    models = list(tables)
    rows = []
    targets = list(TARGETS) + ["average"]
    full = {m: list(tables[m]) + [average_metrics(list(tables[m]))] for m in models}
    for t_idx, target in enumerate(targets):
        for metric, higher in (("MAE", False), ("RMSE", False), ("R2", True)):
            attr = {"MAE": "mae", "RMSE": "rmse", "R2": "r2"}[metric]
            values = [getattr(full[m][t_idx], attr) for m in models]
            best = _best(values, higher)
            rows.append(
                {
                    "target": target,
                    "metric": metric,
                    "values": dict(zip(models, values)),
                    "best": [models[i] for i in sorted(best)],
                }
            )
    return rows


def _fmt(v: float | None) -> str:
    return UNDEFINED if v is None else f"{v:.6f}"


def write_metrics(report_dir, tables: Mapping[str, list[Metrics]]) -> tuple[Path, Path]:
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    models = list(tables)
    rows = comparison_rows(tables)
    csv_path = report_dir / "metrics.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["target", "metric", *models, "best"])
        for row in rows:
            writer.writerow([row["target"], row["metric"], *(_fmt(row["values"][m]) for m in models), ";".join(row["best"])])

    txt_path = report_dir / "metrics.txt"
    width = max(12, *(len(m) + 2 for m in models))
    lines = [f"{'target':<8}{'metric':<8}" + "".join(f"{m:>{width}}" for m in models)]
    for row in rows:
        cells = []
        for m in models:
            text = _fmt(row["values"][m])
            if m in row["best"]:
                text += "*"
            cells.append(f"{text:>{width}}")
        lines.append(f"{row['target']:<8}{row['metric']:<8}" + "".join(cells))
    lines.append("* best value in the row")
    txt_path.write_text("\n".join(lines) + "\n")
    return csv_path, txt_path


def wilcoxon_rows(errors: Mapping[str, np.ndarray]) -> list[dict]:
    rows = []
    for a, b in itertools.combinations(list(errors), 2):
        res = wilcoxon_signed_rank(errors[a], errors[b])
        rows.append(
            {
                "model_a": a,
                "model_b": b,
                "mean_error_a": float(np.mean(errors[a])),
                "mean_error_b": float(np.mean(errors[b])),
                "n_nonzero": res.n,
                "statistic": res.statistic,
                "p_value": res.p_value,
                "method": res.method,
                "degenerate": res.degenerate,
            }
        )
    return rows


def write_wilcoxon(report_dir, errors: Mapping[str, np.ndarray]) -> Path:
    path = Path(report_dir) / "wilcoxon.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        cols = ["model_a", "model_b", "mean_error_a", "mean_error_b", "n_nonzero", "statistic", "p_value", "method", "degenerate"]
        writer.writerow(cols)
        for row in wilcoxon_rows(errors):
            writer.writerow(
                [row["model_a"], row["model_b"], f"{row['mean_error_a']:.6f}", f"{row['mean_error_b']:.6f}",
                 row["n_nonzero"], f"{row['statistic']:.1f}", f"{row['p_value']:.6g}", row["method"], int(row["degenerate"])]
            )
    return path


def alpha_report(alphas) -> list[tuple[str, float, float]]:
    """Mean and population std of the learned conservatism multiplier per target."""
    alphas = np.asarray(alphas, dtype=np.float64)
    return [(TARGETS[j], float(alphas[:, j].mean()), float(alphas[:, j].std())) for j in range(alphas.shape[1])]


def write_alpha_stats(report_dir, alphas) -> Path:
    path = Path(report_dir) / "alpha_stats.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["target", "alpha_mean", "alpha_std"])
        for target, mean, std in alpha_report(alphas):
            writer.writerow([target, f"{mean:.6f}", f"{std:.6f}"])
    return path


def write_quantile_spread(report_dir, report: list[dict]) -> Path:
    path = Path(report_dir) / "quantile_spread.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["target", "spread_mean", "spread_std", "flag_threshold", "n_flagged"])
        for row in report:
            writer.writerow(
                [row["target"], f"{row['mean']:.6f}", f"{row['std']:.6f}", f"{row['threshold']:.6f}", row["n_flagged"]]
            )
    return path
