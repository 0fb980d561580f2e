"""Inverted transformer with three quantile heads per target.

Every feature is one token: its scalar value goes through a per-feature affine
embedding, the encoder attends across features, tokens are mean-pooled and a
linear head emits P10/P50/P90 for each of the four targets.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .labels import TARGETS
from .nncore import LayerNorm, Linear, Module, Parameter, Tensor, TransformerEncoderLayer
from .nncore import functional as F

QUANTILES = (0.10, 0.50, 0.90)
SPREAD_FLAG_SIGMAS = 2.0


@dataclass(frozen=True)
class ITransformerConfig:
    n_features: int = 123
    d_model: int = 128
    layers: int = 4
    n_heads: int = 8
    ff_dim: int = 512
    seed: int = 42
    # fixed per-target location and scale of the outputs, set from training labels
    target_loc: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    target_scale: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        if len(self.target_loc) != 4 or len(self.target_scale) != 4 or min(self.target_scale) <= 0:
            raise ValueError("target_loc/target_scale need four entries with positive scales")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_loc"], d["target_scale"] = list(self.target_loc), list(self.target_scale)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ITransformerConfig:
        known = {f.name for f in fields(cls)}
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in known})


def target_stats(labels: np.ndarray) -> dict:
    labels = np.asarray(labels, dtype=np.float64)
    return {
        "target_loc": tuple(float(v) for v in labels.mean(axis=0)),
        "target_scale": tuple(float(max(v, 1e-2)) for v in labels.std(axis=0)),
    }


class ITransformer(Module):
    def __init__(self, cfg: ITransformerConfig, dtype=np.float64):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        n, d = cfg.n_features, cfg.d_model
        self.embed_weight = Parameter(rng.normal(0.0, 1.0, (n, d)).astype(dtype))
        self.embed_bias = Parameter(rng.normal(0.0, 0.1, (n, d)).astype(dtype))
        self.layers = [TransformerEncoderLayer(d, cfg.n_heads, cfg.ff_dim, rng, dtype) for _ in range(cfg.layers)]
        self.norm = LayerNorm(d, dtype=dtype)
        self.head = Linear(d, 4 * len(QUANTILES), rng, dtype=dtype)
        self._loc = np.repeat(np.asarray(cfg.target_loc, dtype=np.float64), len(QUANTILES))
        self._scale = np.repeat(np.asarray(cfg.target_scale, dtype=np.float64), len(QUANTILES))

    @property
    def dtype(self):
        return self.head.weight.dtype

    def tokens(self, x: Tensor) -> Tensor:
        """(B, n_features) -> (B, n_features, d_model) token states after the encoder."""
        if x.ndim != 2 or x.shape[1] != self.cfg.n_features:
            raise ValueError(f"expected (B, {self.cfg.n_features}) inputs, got {x.shape}")
        h = x.reshape(x.shape[0], x.shape[1], 1) * self.embed_weight + self.embed_bias
        for layer in self.layers:
            h = layer(h)
        return self.norm(h)

    def forward(self, x) -> Tensor:
        """Raw (unsorted) quantiles, shape (B, 4, 3) ordered P10, P50, P90 per target."""
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        pooled = self.tokens(x).mean(axis=1)
        raw = self.head(pooled) * self._scale.astype(self.dtype) + self._loc.astype(self.dtype)
        return raw.reshape(x.shape[0], 4, len(QUANTILES))


def itransformer_loss(raw: Tensor, labels) -> Tensor:
    """Mean over targets of the three-quantile pinball loss on unsorted outputs."""
    y = np.asarray(labels, dtype=raw.dtype)
    total = None
    for j in range(4):
        term = F.quantile3(y[:, j], raw[:, j, 0], raw[:, j, 1], raw[:, j, 2])
        total = term if total is None else total + term
    return total * 0.25


def sort_quantiles(raw) -> np.ndarray:
    """Inference-time monotone quantiles: (B, 4, 3) sorted along the last axis."""
    data = raw.data if isinstance(raw, Tensor) else np.asarray(raw)
    return np.sort(data, axis=-1)


def p90_thresholds(quantiles: np.ndarray) -> np.ndarray:
    return np.asarray(quantiles)[:, :, 2]


def quantile_spread_report(quantiles: np.ndarray, n_sigmas: float = SPREAD_FLAG_SIGMAS) -> tuple[list[dict], np.ndarray]:
    """Per-target spread mean/std and a (B, 4) mask of samples whose spread exceeds mean + 2 std."""
    q = np.asarray(quantiles, dtype=np.float64)
    spread = q[:, :, 2] - q[:, :, 0]
    mean = spread.mean(axis=0)
    std = spread.std(axis=0)
    threshold = mean + n_sigmas * std
    flags = spread > threshold
    report = [
        {"target": TARGETS[j], "mean": float(mean[j]), "std": float(std[j]), "threshold": float(threshold[j]),
         "n_flagged": int(flags[:, j].sum())}
        for j in range(4)
    ]
    return report, flags
