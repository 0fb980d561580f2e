"""Training, fine-tuning and batched inference for both neural models."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Callable, Sequence

import numpy as np

from .features import CONTEXT_INDEX, HOURLY_INDEX
from .itransformer import ITransformer, ITransformerConfig, itransformer_loss, sort_quantiles, target_stats
from .nncore import AdamW, Checkpoint, EarlyStopping, Module, Tensor, cosine_lr, no_grad
from .pctn import Pctn, PctnConfig, check_labels, label_priors, pctn_loss

log = logging.getLogger(__name__)

PCTN_KINDS = ("pctn", "pctn_nogate")
ITRANSFORMER_KIND = "itransformer"


class TrainingError(RuntimeError):
    pass


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 60
    batch_size: int = 256
    lr: float = 1e-3
    lr_min: float = 1e-5
    weight_decay: float = 0.01
    patience: int = 8
    val_fraction: float = 0.15
    samples_per_epoch: int | None = None
    val_samples: int | None = None
    hours_per_group: int = 8
    seed: int = 42

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 0.5:
            raise ValueError("val_fraction must lie in (0, 0.5)")
        if self.max_epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("max_epochs, batch_size and patience must be positive")
        if self.hours_per_group < 1 or self.batch_size % self.hours_per_group:
            raise ValueError("batch_size must be a multiple of hours_per_group")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


ITRANSFORMER_TRAIN_DEFAULTS = {"batch_size": 32, "samples_per_epoch": 256, "val_samples": 256, "hours_per_group": 1}


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]
    best_epoch: int
    best_val_loss: float


# -- data plumbing -------------------------------------------------------------------


def _check_schema(X: np.ndarray, keys: Sequence, labels: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[1] != len(CONTEXT_INDEX) + len(HOURLY_INDEX):
        raise SchemaError(f"expected (N, 123) feature matrix, got {X.shape}")
    if len(keys) != len(X) or len(labels) != len(X):
        raise SchemaError("features, keys and labels disagree in length")
    if not np.all(np.isfinite(X)):
        raise SchemaError("feature matrix contains non-finite values")
    check_labels(labels)


def _groups(keys: Sequence) -> np.ndarray:
    """Integer cell-day id per sample, numbered in first-seen order."""
    seen: dict = {}
    return np.array([seen.setdefault((k[0], k[1]), len(seen)) for k in keys], dtype=np.int64)


def validation_split(keys: Sequence, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Training and validation indices; validation is the latest date, capped at ``val_fraction``."""
    dates = np.array([k[1] for k in keys])
    last = max(dates)
    groups = _groups(keys)
    val_groups = np.unique(groups[dates == last])
    n_groups = len(np.unique(groups))
    cap = max(1, int(math.floor(val_fraction * n_groups)))
    if len(val_groups) == n_groups:
        raise SchemaError("validation needs at least two training dates")
    if len(val_groups) > cap:
        val_groups = np.sort(np.random.default_rng(seed).choice(val_groups, size=cap, replace=False))
    is_val = np.isin(groups, val_groups)
    return np.flatnonzero(~is_val), np.flatnonzero(is_val)


def grouped_batches(groups: np.ndarray, batch_size: int, per_group: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch of batches built from chunks of ``per_group`` start hours of one cell-day.

    Every sample appears exactly once. Samples of a cell-day share their hourly
    encoding, so grouping them cuts the encoder work per batch.
    """
    order = np.argsort(groups, kind="stable")
    bounds = np.flatnonzero(np.diff(groups[order])) + 1
    members = [rng.permutation(m) for m in np.split(order, bounds)]
    n_pass = max(math.ceil(len(m) / per_group) for m in members)
    chunks: list[np.ndarray] = []
    for p in range(n_pass):
        for g in rng.permutation(len(members)):
            part = members[g][p * per_group : (p + 1) * per_group]
            if len(part):
                chunks.append(part)
    groups_per_batch = max(1, batch_size // per_group)
    return [np.concatenate(chunks[i : i + groups_per_batch]) for i in range(0, len(chunks), groups_per_batch)]


# -- generic loop --------------------------------------------------------------------


def _finite(value: float, where: str, epoch: int) -> float:
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss during {where} at epoch {epoch}; lower the learning rate or check inputs")
    return value


def _evaluate(model: Module, batch_loss: Callable[[np.ndarray], Tensor], idx: np.ndarray, batch_size: int) -> float:
    total = 0.0
    with no_grad():
        for start in range(0, len(idx), batch_size):
            part = idx[start : start + batch_size]
            total += batch_loss(part).item() * len(part)
    return total / len(idx)


def fit(
    model: Module,
    batch_loss: Callable[[np.ndarray], Tensor],
    make_batches: Callable[[np.random.Generator], list[np.ndarray]],
    val_idx: np.ndarray,
    cfg: TrainConfig,
    max_epochs: int | None = None,
    lr: float | None = None,
    early_stopping: bool = True,
) -> tuple[list[dict], int, float]:
    """AdamW with a per-step cosine schedule; restores the best validation weights."""
    rng = np.random.default_rng(cfg.seed)
    epochs = cfg.max_epochs if max_epochs is None else max_epochs
    lr_max = cfg.lr if lr is None else lr
    opt = AdamW(model.parameters(), lr=lr_max, weight_decay=cfg.weight_decay)
    steps_per_epoch = len(_cap(make_batches(np.random.default_rng(cfg.seed)), cfg))
    total_steps = max(1, epochs * steps_per_epoch)
    stopper = EarlyStopping(patience=cfg.patience)
    best_state, history, step = model.state_dict(), [], 0
    eval_batch = max(cfg.batch_size, 24 * 32)
    for epoch in range(epochs):
        batches = _cap(make_batches(rng), cfg)
        running = 0.0
        for batch in batches:
            current_lr = cosine_lr(step, total_steps, lr_max, cfg.lr_min)
            opt.zero_grad()
            loss = batch_loss(batch)
            value = _finite(loss.item(), "training", epoch)
            loss.backward()
            opt.step(current_lr)
            running += value
            step += 1
        val = _finite(_evaluate(model, batch_loss, val_idx, eval_batch), "validation", epoch)
        history.append({"epoch": epoch, "train_loss": running / max(1, len(batches)), "val_loss": val, "lr": current_lr})
        stop = stopper.update(val)
        if stopper.improved_last:
            best_state = model.state_dict()
        log.info("epoch %d train %.5f val %.5f", epoch, history[-1]["train_loss"], val)
        if early_stopping and stop:
            break
    model.load_state_dict(best_state)
    return history, stopper.best_epoch, stopper.best


def _cap(batches: list[np.ndarray], cfg: TrainConfig) -> list[np.ndarray]:
    if cfg.samples_per_epoch is None:
        return batches
    kept, n = [], 0
    for b in batches:
        if n >= cfg.samples_per_epoch:
            break
        kept.append(b)
        n += len(b)
    return kept


def _val_subset(val_idx: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    if cfg.val_samples is None or len(val_idx) <= cfg.val_samples:
        return val_idx
    pick = np.random.default_rng(cfg.seed + 1).choice(len(val_idx), size=cfg.val_samples, replace=False)
    return val_idx[np.sort(pick)]


# -- PCTN ----------------------------------------------------------------------------


def _pctn_batch_loss(model: Pctn, X: np.ndarray, hours: np.ndarray, labels: np.ndarray):
    ctx = X[:, CONTEXT_INDEX].astype(np.float32)
    hourly = X[:, HOURLY_INDEX].astype(np.float32)

    def batch_loss(idx: np.ndarray) -> Tensor:
        return pctn_loss(model(ctx[idx], hourly[idx], hours[idx]), labels[idx])

    return batch_loss


def _start_hours(keys: Sequence) -> np.ndarray:
    return np.array([int(k[2]) for k in keys], dtype=np.int64)


def build_pctn(kind: str, labels: np.ndarray, hours: np.ndarray, seed: int, overrides: dict | None = None) -> Pctn:
    if kind not in PCTN_KINDS:
        raise ValueError(f"unknown PCTN variant {kind!r}")
    cfg = PctnConfig(gated=(kind == "pctn"), seed=seed, **(overrides or {}))
    cfg = replace(cfg, **label_priors(labels, hours))
    return Pctn(cfg, dtype=np.float32)


def _checkpoint(kind: str, model: Module, model_cfg: dict, train_cfg: TrainConfig, extra: dict) -> Checkpoint:
    config = {"model": model_cfg, "train": train_cfg.to_dict(), **extra}
    return Checkpoint(kind, train_cfg.seed, config, model.state_dict())


def train_pctn(
    X: np.ndarray,
    keys: Sequence,
    labels: np.ndarray,
    cfg: TrainConfig = TrainConfig(),
    kind: str = "pctn",
    model_overrides: dict | None = None,
) -> TrainResult:
    X, labels = np.asarray(X), np.asarray(labels, dtype=np.float64)
    _check_schema(X, keys, labels)
    hours = _start_hours(keys)
    train_idx, val_idx = validation_split(keys, cfg.val_fraction, cfg.seed)
    model = build_pctn(kind, labels[train_idx], hours[train_idx], cfg.seed, model_overrides)
    groups = _groups(keys)[train_idx]
    batch_loss = _pctn_batch_loss(model, X, hours, labels)

    def make_batches(rng):
        return [train_idx[b] for b in grouped_batches(groups, cfg.batch_size, cfg.hours_per_group, rng)]

    history, best_epoch, best = fit(model, batch_loss, make_batches, _val_subset(val_idx, cfg), cfg)
    extra = {"n_train": int(len(train_idx)), "n_val": int(len(val_idx)), "n_parameters": model.n_parameters()}
    return TrainResult(_checkpoint(kind, model, model.cfg.to_dict(), cfg, extra), history, best_epoch, best)


def load_model(ckpt: Checkpoint) -> Module:
    if ckpt.kind in PCTN_KINDS:
        model = Pctn(PctnConfig.from_dict(ckpt.config["model"]), dtype=np.float32)
    elif ckpt.kind == ITRANSFORMER_KIND:
        model = ITransformer(ITransformerConfig.from_dict(ckpt.config["model"]), dtype=np.float32)
    else:
        raise SchemaError(f"unknown checkpoint kind {ckpt.kind!r}")
    model.load_state_dict(ckpt.params)
    return model


def finetune(
    ckpt: Checkpoint,
    X: np.ndarray,
    keys: Sequence,
    labels: np.ndarray,
    epochs: int = 5,
    cfg: TrainConfig | None = None,
    lr_scale: float = 0.1,
) -> TrainResult:
    """Warm-start from ``ckpt`` and train a few epochs on new-day samples."""
    if not 5 <= epochs <= 10:
        raise ValueError("fine-tuning runs five to ten epochs")
    cfg = cfg or TrainConfig.from_dict(ckpt.config["train"])
    X, labels = np.asarray(X), np.asarray(labels, dtype=np.float64)
    _check_schema(X, keys, labels)
    model = load_model(ckpt)
    train_idx, val_idx = validation_split(keys, cfg.val_fraction, cfg.seed)
    if ckpt.kind in PCTN_KINDS:
        hours = _start_hours(keys)
        batch_loss = _pctn_batch_loss(model, X, hours, labels)
        groups = _groups(keys)[train_idx]

        def make_batches(rng):
            return [train_idx[b] for b in grouped_batches(groups, cfg.batch_size, cfg.hours_per_group, rng)]
    else:
        batch_loss = _itransformer_batch_loss(model, X, labels)

        def make_batches(rng):
            return _random_batches(train_idx, cfg.batch_size, rng)

    history, best_epoch, best = fit(
        model, batch_loss, make_batches, _val_subset(val_idx, cfg), cfg, max_epochs=epochs, lr=cfg.lr * lr_scale,
        early_stopping=False,
    )
    config = dict(ckpt.config, finetune_epochs=epochs)
    return TrainResult(Checkpoint(ckpt.kind, ckpt.seed, config, model.state_dict()), history, best_epoch, best)


def validation_loss(ckpt: Checkpoint, X: np.ndarray, keys: Sequence, labels: np.ndarray) -> float:
    """Model loss on the validation slice of ``keys`` as chosen by the stored training config."""
    cfg = TrainConfig.from_dict(ckpt.config["train"])
    model = load_model(ckpt)
    labels = np.asarray(labels, dtype=np.float64)
    _, val_idx = validation_split(keys, cfg.val_fraction, cfg.seed)
    if ckpt.kind in PCTN_KINDS:
        batch_loss = _pctn_batch_loss(model, np.asarray(X), _start_hours(keys), labels)
    else:
        batch_loss = _itransformer_batch_loss(model, np.asarray(X), labels)
    return _evaluate(model, batch_loss, _val_subset(val_idx, cfg), max(cfg.batch_size, 768))


def predict_pctn(ckpt: Checkpoint, X: np.ndarray, start_hours, batch_size: int = 768) -> dict[str, np.ndarray]:
    """Inference over a frozen checkpoint; returns t_hat, mu, sigma, alpha, theta, gates, p_hours arrays."""
    if ckpt.kind not in PCTN_KINDS:
        raise SchemaError(f"checkpoint kind {ckpt.kind!r} is not a PCTN model")
    model = load_model(ckpt)
    X = np.asarray(X)
    hours = np.asarray(start_hours)
    ctx = X[:, CONTEXT_INDEX].astype(np.float32)
    hourly = X[:, HOURLY_INDEX].astype(np.float32)
    parts: list[dict] = []
    with no_grad():
        for start in range(0, len(X), batch_size):
            sl = slice(start, start + batch_size)
            parts.append(model(ctx[sl], hourly[sl], hours[sl]).numpy())
    return {k: np.concatenate([p[k] for p in parts]).astype(np.float64) for k in parts[0]}


# -- iTransformer --------------------------------------------------------------------


def _itransformer_batch_loss(model: ITransformer, X: np.ndarray, labels: np.ndarray):
    Xf = X.astype(np.float32)

    def batch_loss(idx: np.ndarray) -> Tensor:
        return itransformer_loss(model(Xf[idx]), labels[idx])

    return batch_loss


def _random_batches(idx: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = idx[rng.permutation(len(idx))]
    return [perm[i : i + batch_size] for i in range(0, len(perm), batch_size)]


def itransformer_train_config(**overrides) -> TrainConfig:
    return TrainConfig(**{**ITRANSFORMER_TRAIN_DEFAULTS, **overrides})


def train_itransformer(
    X: np.ndarray,
    keys: Sequence,
    labels: np.ndarray,
    cfg: TrainConfig | None = None,
    model_overrides: dict | None = None,
) -> TrainResult:
    cfg = cfg or itransformer_train_config()
    X, labels = np.asarray(X), np.asarray(labels, dtype=np.float64)
    _check_schema(X, keys, labels)
    train_idx, val_idx = validation_split(keys, cfg.val_fraction, cfg.seed)
    mcfg = ITransformerConfig(seed=cfg.seed, **(model_overrides or {}))
    mcfg = replace(mcfg, **target_stats(labels[train_idx]))
    model = ITransformer(mcfg, dtype=np.float32)
    batch_loss = _itransformer_batch_loss(model, X, labels)
    history, best_epoch, best = fit(
        model, batch_loss, lambda rng: _random_batches(train_idx, cfg.batch_size, rng), _val_subset(val_idx, cfg), cfg
    )
    extra = {"n_train": int(len(train_idx)), "n_val": int(len(val_idx)), "n_parameters": model.n_parameters()}
    return TrainResult(_checkpoint(ITRANSFORMER_KIND, model, mcfg.to_dict(), cfg, extra), history, best_epoch, best)


def predict_itransformer(ckpt: Checkpoint, X: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Sorted quantiles, shape (N, 4, 3)."""
    if ckpt.kind != ITRANSFORMER_KIND:
        raise SchemaError(f"checkpoint kind {ckpt.kind!r} is not an iTransformer")
    model = load_model(ckpt)
    Xf = np.asarray(X, dtype=np.float32)
    parts = []
    with no_grad():
        for start in range(0, len(Xf), batch_size):
            parts.append(sort_quantiles(model(Xf[start : start + batch_size])))
    return np.concatenate(parts).astype(np.float64)
