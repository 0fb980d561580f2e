"""Pipeline stages. Each stage reads and writes only the documented file artifacts.

Layout::

    <input_dir>/alarms_YYYYMMDD_HHMM.csv | celldays.csv
    <work_dir>/celldays.csv
    <work_dir>/features.csv, features.manifest.txt
    <work_dir>/dataset.csv
    <work_dir>/models/<kind>.ckpt (+ .manifest.txt, .history.csv)
    <work_dir>/predictions/<kind>.csv
    <work_dir>/manifests/<stage>.json
    <report_dir>/metrics.csv, metrics.txt, wilcoxon.csv, alpha_stats.csv,
                 quantile_spread.csv, spread_flags.csv, data_audit.csv,
                 label_holdout.csv, summary.txt
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
import platform
from collections import Counter
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .config import RunConfig
from .evaluation import (
    Metrics,
    naive_baseline,
    per_sample_error,
    per_target_metrics,
    write_alpha_stats,
    write_metrics,
    write_quantile_spread,
    write_wilcoxon,
)
from .features import FEATURE_NAMES, build_feature_set, read_feature_csv, write_feature_csv
from .ingest import aggregate_all, dedup, parse_snapshots, read_celldays, write_celldays
from .itransformer import p90_thresholds, quantile_spread_report
from .labels import TARGETS, derive_labels_batch, ks_holdout_check
from .nncore import load_checkpoint, save_checkpoint
from .synth import distribution_audit, generate_cell_days, write_snapshots
from .training import (
    PCTN_KINDS,
    finetune,
    predict_itransformer,
    predict_pctn,
    train_itransformer,
    train_pctn,
)

log = logging.getLogger(__name__)

STAGES = ("synth", "ingest", "features", "label", "train", "predict", "evaluate", "report")
SNAPSHOT_GLOB = "alarms_*.csv"
CELLDAY_FILE = "celldays.csv"
FLOAT = "{:.9g}"


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


# -- manifests -----------------------------------------------------------------------


def sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def versions() -> dict:
    return {
        "alarmthresh": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


def write_manifest(cfg: RunConfig, stage: str, inputs: Iterable, outputs: Iterable, extra: dict | None = None) -> Path:
    path = Path(cfg.work_dir) / "manifests" / f"{stage}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {
        "stage": stage,
        "config": cfg.echo(),
        "versions": versions(),
        "inputs": {str(p): sha256(p) for p in sorted(Path(p) for p in inputs)},
        "outputs": {str(p): sha256(p) for p in sorted(Path(p) for p in outputs)},
    }
    if extra:
        body.update(extra)
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(cfg: RunConfig, stage: str) -> dict:
    path = Path(cfg.work_dir) / "manifests" / f"{stage}.json"
    if not path.is_file():
        raise StageError(stage, f"manifest {path} missing; run the '{stage}' stage first")
    return json.loads(path.read_text())


def _need(path: Path, stage: str, producer: str) -> Path:
    if not path.is_file():
        raise StageError(stage, f"{path} not found; run the '{producer}' stage first")
    return path


def _work(cfg: RunConfig, *parts: str) -> Path:
    return Path(cfg.work_dir).joinpath(*parts)


# -- stages --------------------------------------------------------------------------


def stage_synth(cfg: RunConfig) -> list[Path]:
    """Generate synthetic data into the input directory (replacing earlier generated files)."""
    scfg = cfg.synth_config()
    in_dir = Path(cfg.input_dir)
    in_dir.mkdir(parents=True, exist_ok=True)
    for old in list(in_dir.glob(SNAPSHOT_GLOB)) + list(in_dir.glob(CELLDAY_FILE)):
        old.unlink()
    if cfg.synth_format == "snapshots":
        outputs = write_snapshots(scfg, in_dir)
    else:
        outputs = [write_celldays(in_dir / CELLDAY_FILE, generate_cell_days(scfg))]
    write_manifest(cfg, "synth", [], outputs, {"n_files": len(outputs)})
    log.info("synth: wrote %d files to %s", len(outputs), in_dir)
    return outputs


def stage_ingest(cfg: RunConfig) -> Path:
    in_dir = Path(cfg.input_dir)
    snapshots = sorted(in_dir.glob(SNAPSHOT_GLOB))
    out = _work(cfg, CELLDAY_FILE)
    stats: Counter = Counter()
    if snapshots:
        cell_days = aggregate_all(dedup(parse_snapshots(snapshots, stats)))
        inputs = snapshots
    elif (in_dir / CELLDAY_FILE).is_file():
        cell_days = read_celldays(in_dir / CELLDAY_FILE)
        inputs = [in_dir / CELLDAY_FILE]
    else:
        raise StageError("ingest", f"no {SNAPSHOT_GLOB} or {CELLDAY_FILE} files in {in_dir}")
    if not cell_days:
        raise StageError("ingest", "no cell-days could be aggregated from the input")
    cell_days = sorted(cell_days, key=lambda c: (c.date, c.cell_id))
    write_celldays(out, cell_days)
    extra = {"row_stats": dict(sorted(stats.items())), "n_cell_days": len(cell_days)}
    write_manifest(cfg, "ingest", inputs, [out], extra)
    if stats.get("skipped"):
        log.warning("ingest: skipped %d malformed rows", stats["skipped"])
    return out


def _scaler_text(fs) -> str:
    tf = fs.trend_fit
    lines = [
        f"train_dates: {','.join(d.isoformat() for d in fs.train_dates)}",
        f"test_dates: {','.join(d.isoformat() for d in fs.test_dates)}",
        f"scaler_fit_dates: {','.join(d.isoformat() for d in fs.train_dates)}",
        f"trend_fit_dates: {','.join(d.isoformat() for d in tf.fit_dates)}",
        f"trend_origin: {tf.origin.isoformat()}",
        f"trend_intercept: {tf.intercept!r}",
        f"trend_slope: {tf.slope!r}",
        f"trend_residual_std: {tf.residual_std!r}",
        "feature\tmean\tstd\tpassthrough",
    ]
    for name, m, s, p in zip(FEATURE_NAMES, fs.scaler.mean, fs.scaler.std, fs.scaler.passthrough):
        lines.append(f"{name}\t{m!r}\t{s!r}\t{int(p)}")
    return "\n".join(lines) + "\n"


def stage_features(cfg: RunConfig) -> Path:
    src = _need(_work(cfg, CELLDAY_FILE), "features", "ingest")
    cell_days = read_celldays(src)
    try:
        fs = build_feature_set(cell_days, cfg.n_test_dates)
    except ValueError as exc:
        raise StageError("features", str(exc)) from exc
    out = write_feature_csv(_work(cfg, "features.csv"), fs.X, fs.keys)
    sidecar = _work(cfg, "features.manifest.txt")
    sidecar.write_text(_scaler_text(fs))
    iso = lambda ds: [d.isoformat() for d in ds]  # noqa: E731
    extra = {
        "train_dates": iso(fs.train_dates),
        "test_dates": iso(fs.test_dates),
        "scaler_fit_dates": iso(fs.train_dates),
        "trend_fit_dates": iso(fs.trend_fit.fit_dates),
        "n_samples": len(fs.keys),
        "n_cell_days": len(cell_days),
    }
    write_manifest(cfg, "features", [src], [out, sidecar], extra)
    return out


def stage_label(cfg: RunConfig) -> Path:
    feat = _need(_work(cfg, "features.csv"), "label", "features")
    src = _need(_work(cfg, CELLDAY_FILE), "label", "ingest")
    X, keys, _ = read_feature_csv(feat)
    by_key = {(cd.cell_id, cd.date): cd for cd in read_celldays(src)}
    try:
        days = [by_key[(k[0], k[1])] for k in keys]
    except KeyError as exc:
        raise StageError("label", f"feature row {exc} has no matching cell-day") from exc
    labels = derive_labels_batch(
        np.stack([d.hourly_inactive for d in days]),
        np.stack([d.hourly_fluct for d in days]).astype(np.float64),
        np.array([k[2] for k in keys]),
    )
    out = write_feature_csv(_work(cfg, "dataset.csv"), X, keys, labels)
    write_manifest(cfg, "label", [feat, src], [out])
    return out


def _load_dataset(cfg: RunConfig, stage: str):
    path = _need(_work(cfg, "dataset.csv"), stage, "label")
    X, keys, labels = read_feature_csv(path)
    if labels is None:
        raise StageError(stage, f"{path} has no label columns")
    test_dates = {dt.date.fromisoformat(d) for d in read_manifest(cfg, "features")["test_dates"]}
    is_test = np.array([k[1] in test_dates for k in keys])
    return path, X, keys, labels, is_test


def _subset(keys, mask):
    return [k for k, m in zip(keys, mask) if m]


def _write_history(path: Path, history: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for h in history:
            writer.writerow([h["epoch"], FLOAT.format(h["train_loss"]), FLOAT.format(h["val_loss"]), FLOAT.format(h["lr"])])


def stage_train(cfg: RunConfig, finetune_from: Path | None = None) -> dict[str, Path]:
    data, X, keys, labels, is_test = _load_dataset(cfg, "train")
    train = ~is_test
    Xtr, ktr, ytr = X[train], _subset(keys, train), labels[train]
    outputs: dict[str, Path] = {}
    model_dir = _work(cfg, "models")
    model_dir.mkdir(parents=True, exist_ok=True)
    kinds = [m for m in cfg.models if m != "naive"]
    if finetune_from is not None:
        ckpt = load_checkpoint(finetune_from)
        kinds = [ckpt.kind]
    for kind in kinds:
        log.info("train: %s on %d samples", kind, len(ktr))
        if finetune_from is not None:
            result = finetune(ckpt, Xtr, ktr, ytr, epochs=cfg.finetune_epochs or 5)
        elif kind in PCTN_KINDS:
            result = train_pctn(Xtr, ktr, ytr, cfg.train_config(), kind=kind)
        else:
            result = train_itransformer(Xtr, ktr, ytr, cfg.itransformer_config())
        path = save_checkpoint(result.checkpoint, model_dir / f"{kind}.ckpt")
        _write_history(model_dir / f"{kind}.history.csv", result.history)
        outputs[kind] = path
        if cfg.finetune_epochs and finetune_from is None:
            tuned = finetune(result.checkpoint, Xtr, ktr, ytr, epochs=cfg.finetune_epochs)
            save_checkpoint(tuned.checkpoint, path)
            _write_history(model_dir / f"{kind}.finetune.csv", tuned.history)
    manifest_outputs = [p for p in outputs.values()] + [model_dir / f"{k}.history.csv" for k in outputs]
    extra = {
        "fit_dates": sorted({k[1].isoformat() for k in ktr}),
        "parameters": {k: load_checkpoint(p).n_parameters for k, p in outputs.items()},
    }
    write_manifest(cfg, "train", [data], manifest_outputs, extra)
    return outputs


def _prediction_frame(keys) -> dict:
    return {
        "cell_id": [k[0] for k in keys],
        "date": [k[1].isoformat() for k in keys],
        "start_hour": [int(k[2]) for k in keys],
    }


def _write_predictions(path: Path, keys, columns: dict[str, np.ndarray]) -> Path:
    frame = pd.DataFrame({**_prediction_frame(keys), **{k: np.asarray(v, dtype=np.float64) for k, v in columns.items()}})
    frame.to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
    return path


def stage_predict(cfg: RunConfig) -> dict[str, Path]:
    data, X, keys, labels, is_test = _load_dataset(cfg, "predict")
    Xte, kte = X[is_test], _subset(keys, is_test)
    if not kte:
        raise StageError("predict", "no test-date samples in the dataset")
    pred_dir = _work(cfg, "predictions")
    pred_dir.mkdir(parents=True, exist_ok=True)
    hours = np.array([k[2] for k in kte])
    outputs: dict[str, Path] = {}
    inputs = [data]
    for kind in cfg.models:
        path = pred_dir / f"{kind}.csv"
        if kind == "naive":
            preds, _ = naive_baseline(labels[~is_test], labels[is_test])
            cols = {f"{t}_hat": preds[:, j] for j, t in enumerate(TARGETS)}
        else:
            ckpt_path = _need(_work(cfg, "models", f"{kind}.ckpt"), "predict", "train")
            inputs.append(ckpt_path)
            ckpt = load_checkpoint(ckpt_path)
            if kind in PCTN_KINDS:
                out = predict_pctn(ckpt, Xte, hours)
                cols = {f"{t}_hat": out["t_hat"][:, j] for j, t in enumerate(TARGETS)}
                cols.update(
                    mu2=out["mu"][:, 1], sigma2=out["sigma"][:, 1], alpha2=out["alpha"][:, 1],
                    gate3=out["gates"][:, 0], gate4=out["gates"][:, 1],
                    alpha1=out["alpha"][:, 0], alpha3=out["alpha"][:, 2], alpha4=out["alpha"][:, 3],
                )
            else:
                q = predict_itransformer(ckpt, Xte)
                thresholds = p90_thresholds(q)
                cols = {f"{t}_hat": thresholds[:, j] for j, t in enumerate(TARGETS)}
                for level, idx in (("q10", 0), ("q50", 1), ("q90", 2)):
                    cols.update({f"{level}_{t}": q[:, j, idx] for j, t in enumerate(TARGETS)})
                cols.update({f"spread_{t}": q[:, j, 2] - q[:, j, 0] for j, t in enumerate(TARGETS)})
        outputs[kind] = _write_predictions(path, kte, cols)
    write_manifest(cfg, "predict", inputs, list(outputs.values()))
    return outputs


def _read_predictions(path: Path, keys) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"cell_id": str, "date": str})
    expected = _prediction_frame(keys)
    if list(frame["cell_id"]) != expected["cell_id"] or list(frame["date"]) != expected["date"] or list(
        frame["start_hour"]
    ) != expected["start_hour"]:
        raise StageError("evaluate", f"{path} rows do not match the test samples of the dataset")
    return frame


def stage_evaluate(cfg: RunConfig) -> list[Path]:
    data, _, keys, labels, is_test = _load_dataset(cfg, "evaluate")
    kte, yte = _subset(keys, is_test), labels[is_test]
    report_dir = Path(cfg.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    tables: dict[str, list[Metrics]] = {}
    errors: dict[str, np.ndarray] = {}
    frames: dict[str, pd.DataFrame] = {}
    inputs = [data]
    for kind in cfg.models:
        path = _need(_work(cfg, "predictions", f"{kind}.csv"), "evaluate", "predict")
        inputs.append(path)
        frame = _read_predictions(path, kte)
        frames[kind] = frame
        preds = frame[[f"{t}_hat" for t in TARGETS]].to_numpy()
        tables[kind] = per_target_metrics(yte, preds)
        errors[kind] = per_sample_error(preds, yte)
    csv_path, txt_path = write_metrics(report_dir, tables)
    outputs = [csv_path, txt_path]
    if len(errors) > 1:
        outputs.append(write_wilcoxon(report_dir, errors))
    if "pctn" in frames:
        alphas = frames["pctn"][["alpha1", "alpha2", "alpha3", "alpha4"]].to_numpy()
        outputs.append(write_alpha_stats(report_dir, alphas))
    if "itransformer" in frames:
        f = frames["itransformer"]
        q = np.stack([f[[f"{lv}_{t}" for lv in ("q10", "q50", "q90")]].to_numpy() for t in TARGETS], axis=1)
        report, flags = quantile_spread_report(q)
        outputs.append(write_quantile_spread(report_dir, report))
        outputs.append(_write_spread_flags(report_dir / "spread_flags.csv", kte, q, flags))
    write_manifest(cfg, "evaluate", inputs, outputs)
    return outputs


def _write_spread_flags(path: Path, keys, q: np.ndarray, flags: np.ndarray) -> Path:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cell_id", "date", "start_hour", "target", "spread"])
        for i, j in zip(*np.nonzero(flags)):
            k = keys[i]
            writer.writerow([k[0], k[1].isoformat(), k[2], TARGETS[j], FLOAT.format(q[i, j, 2] - q[i, j, 0])])
    return path


def stage_report(cfg: RunConfig) -> Path:
    src = _need(_work(cfg, CELLDAY_FILE), "report", "ingest")
    cell_days = read_celldays(src)
    report_dir = Path(cfg.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    audit = distribution_audit(cell_days)
    audit_path = report_dir / "data_audit.csv"
    with audit_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["statistic", "value"])
        for key, value in audit.items():
            if isinstance(value, dict):
                for k, v in value.items():
                    writer.writerow([f"{key}[{k}]", FLOAT.format(v)])
            elif isinstance(value, (list, tuple, np.ndarray)):
                for i, v in enumerate(value):
                    writer.writerow([f"{key}[{i + 1}]", FLOAT.format(v)])
            else:
                writer.writerow([key, FLOAT.format(value)])
    holdout = ks_holdout_check(cell_days, 0.15, cfg.seed)
    holdout_path = report_dir / "label_holdout.csv"
    with holdout_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["target", "ks_statistic", "p_value", "n_holdout_cells", "n_rest_cells", "locally_consistent"])
        for target, res in holdout.tests.items():
            writer.writerow(
                [target, FLOAT.format(res.statistic), FLOAT.format(res.p_value), holdout.n_holdout_cells,
                 holdout.n_rest_cells, int(holdout.locally_consistent)]
            )
    parts = ["# data audit", audit_path.read_text(), "# label holdout check", holdout_path.read_text()]
    for name in ("metrics.txt", "wilcoxon.csv", "alpha_stats.csv", "quantile_spread.csv"):
        p = report_dir / name
        if p.is_file():
            parts += [f"# {name}", p.read_text()]
    summary = report_dir / "summary.txt"
    summary.write_text("\n".join(parts))
    write_manifest(cfg, "report", [src], [audit_path, holdout_path, summary])
    return summary


def run_pipeline(cfg: RunConfig, skip_synth: bool = False) -> Path:
    if not skip_synth:
        stage_synth(cfg)
    stage_ingest(cfg)
    stage_features(cfg)
    stage_label(cfg)
    stage_train(cfg)
    stage_predict(cfg)
    stage_evaluate(cfg)
    return stage_report(cfg)
