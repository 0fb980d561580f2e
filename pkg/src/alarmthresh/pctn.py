"""Percentile-guided contextual threshold network.

Five stages: a context MLP, a transformer over the 48 hourly values with
attention pooling, two-way cross attention, a fusion MLP, and target-specific
heads (categorical window length, dynamic-alpha inactive time, gated
fluctuation counts).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .labels import FLUCT_FLOOR, T1_RANGE, sensitivity_factors
from .nncore import (
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
    Tensor,
    TransformerEncoderLayer,
    concat,
    take_rows,
)
from .nncore import functional as F

CLASS_VALUES = np.arange(T1_RANGE[0], T1_RANGE[1] + 1, dtype=np.float64)
INACTIVE_TAU = 0.75
FLUCT_TAU = 0.90
MIN_SPREAD = 0.1
MIN_ALPHA = 0.1


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class PctnConfig:
    ctx_in: int = 75
    ctx_hidden: int = 128
    ctx_out: int = 64
    hourly_tokens: int = 48
    token_dim: int = 32
    encoder_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 64
    fusion_dim: int = 64
    alpha_hidden: int = 32
    gated: bool = True
    seed: int = 42
    # fixed per-target location and scale of the distribution head, set from training labels
    target_loc: tuple[float, ...] = (5.0, 10.0, 0.0, 0.0)
    target_scale: tuple[float, ...] = (1.0, 10.0, 1.0, 1.0)
    # log class frequencies for the hours head and floor log-odds for the gates
    class_prior: tuple[float, ...] = field(default_factory=lambda: (0.0,) * 7)
    gate_prior: tuple[float, ...] = (0.0, 0.0)

    def __post_init__(self):
        if self.ctx_in != 75 or self.hourly_tokens != 48:
            raise ValueError("the feature contract fixes 75 context and 48 hourly inputs")
        if len(self.target_loc) != 4 or len(self.target_scale) != 4 or min(self.target_scale) <= 0:
            raise ValueError("target_loc/target_scale need four entries with positive scales")
        if len(self.class_prior) != len(CLASS_VALUES) or len(self.gate_prior) != 2:
            raise ValueError("class_prior needs 7 entries and gate_prior 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("target_loc", "target_scale", "class_prior", "gate_prior"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PctnConfig:
        known = {f.name for f in fields(cls)}
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in known}
        return cls(**kw)


def label_priors(labels: np.ndarray, start_hours: np.ndarray) -> dict:
    """Head initialisation statistics from training labels (t1..t4 columns)."""
    labels = np.asarray(labels, dtype=np.float64)
    check_labels(labels)
    scaled_t2 = labels[:, 1] / sensitivity_factors(start_hours)
    cols = [labels[:, 0], scaled_t2, labels[:, 2] - FLUCT_FLOOR, labels[:, 3] - FLUCT_FLOOR]
    loc = tuple(float(c.mean()) for c in cols)
    scale = tuple(float(max(c.std(), 1e-2)) for c in cols)
    counts = np.array([(labels[:, 0] == k).sum() for k in CLASS_VALUES], dtype=np.float64)
    class_prior = tuple(float(v) for v in np.log((counts + 1.0) / (counts.sum() + len(counts))))
    gate_prior = []
    for j in (2, 3):
        p = (np.sum(labels[:, j] > FLUCT_FLOOR) + 1.0) / (len(labels) + 2.0)
        gate_prior.append(float(np.log(p / (1.0 - p))))
    return {"target_loc": loc, "target_scale": scale, "class_prior": class_prior, "gate_prior": tuple(gate_prior)}


def check_labels(labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.shape[1] != 4:
        raise LabelError(f"expected (N, 4) labels, got {labels.shape}")
    t1 = labels[:, 0]
    if np.any(t1 != np.round(t1)) or np.any((t1 < T1_RANGE[0]) | (t1 > T1_RANGE[1])):
        raise LabelError("window-hours label outside the integers 2..8")


@dataclass
class PctnOutput:
    mu: Tensor  # (B, 4)
    sigma: Tensor  # (B, 4)
    alpha: Tensor  # (B, 4)
    theta: Tensor  # (B, 4)
    hour_logits: Tensor  # (B, 7)
    p_hours: Tensor  # (B, 7)
    gates: Tensor | None  # (B, 2) for the fluctuation targets, None without the gate
    t_hat: Tensor  # (B, 4)

    def numpy(self) -> dict[str, np.ndarray]:
        out = {
            "mu": self.mu.data,
            "sigma": self.sigma.data,
            "alpha": self.alpha.data,
            "theta": self.theta.data,
            "p_hours": self.p_hours.data,
            "t_hat": self.t_hat.data,
        }
        n = self.t_hat.shape[0]
        out["gates"] = self.gates.data if self.gates is not None else np.ones((n, 2), dtype=self.t_hat.dtype)
        return out


class ContextEncoder(Module):
    """``GELU(LN(W2 GELU(LN(W1 x))))``."""

    def __init__(self, cfg: PctnConfig, rng: np.random.Generator, dtype=np.float64):
        self.fc1 = Linear(cfg.ctx_in, cfg.ctx_hidden, rng, dtype=dtype)
        self.norm1 = LayerNorm(cfg.ctx_hidden, dtype=dtype)
        self.fc2 = Linear(cfg.ctx_hidden, cfg.ctx_out, rng, dtype=dtype)
        self.norm2 = LayerNorm(cfg.ctx_out, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.fc1.in_dim:
            raise ValueError(f"context input must have {self.fc1.in_dim} features, got {x.shape[-1]}")
        return F.gelu(self.norm2(self.fc2(F.gelu(self.norm1(self.fc1(x))))))


class HourlyEncoder(Module):
    """Each hourly value becomes a token; a transformer stack and attention pooling follow."""

    def __init__(self, cfg: PctnConfig, rng: np.random.Generator, dtype=np.float64):
        n, d = cfg.hourly_tokens, cfg.token_dim
        self.embed_weight = Parameter(rng.normal(0.0, 1.0, (n, d)).astype(dtype))
        self.embed_bias = Parameter(np.zeros((n, d), dtype=dtype))
        self.position = Parameter(rng.normal(0.0, 0.1, (n, d)).astype(dtype))
        self.layers = [TransformerEncoderLayer(d, cfg.n_heads, cfg.ff_dim, rng, dtype) for _ in range(cfg.encoder_layers)]
        self.norm = LayerNorm(d, dtype=dtype)
        self.pool = Parameter(rng.normal(0.0, 0.1, (d,)).astype(dtype))

    def forward(self, x: Tensor, return_weights: bool = False):
        """``x`` is (B, 48); returns token states (B, 48, d) and the pooled vector (B, d)."""
        if x.ndim != 2 or x.shape[1] != self.embed_weight.shape[0]:
            raise ValueError(f"hourly input must be (B, {self.embed_weight.shape[0]}), got {x.shape}")
        h = x.reshape(x.shape[0], x.shape[1], 1) * self.embed_weight + self.embed_bias + self.position
        for layer in self.layers:
            h = layer(h)
        h = self.norm(h)
        d = h.shape[-1]
        weights = F.softmax((h @ self.pool.reshape(d, 1)).reshape(h.shape[0], h.shape[1]), axis=-1)
        pooled = (weights.reshape(h.shape[0], 1, h.shape[1]) @ h).reshape(h.shape[0], d)
        return (h, pooled, weights) if return_weights else (h, pooled)


class FusionMLP(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, dtype=np.float64):
        self.fc1 = Linear(in_dim, out_dim, rng, dtype=dtype)
        self.norm = LayerNorm(out_dim, dtype=dtype)
        self.fc2 = Linear(out_dim, out_dim, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.norm(self.fc1(x))))


class AlphaMLP(Module):
    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator, dtype=np.float64):
        self.fc1 = Linear(in_dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, 1, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class Pctn(Module):
    def __init__(self, cfg: PctnConfig, dtype=np.float64):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.context = ContextEncoder(cfg, rng, dtype)
        self.hourly = HourlyEncoder(cfg, rng, dtype)
        self.forward_attn = MultiHeadAttention(cfg.ctx_out, cfg.token_dim, cfg.ctx_out, cfg.n_heads, rng, dtype)
        self.backward_attn = MultiHeadAttention(cfg.token_dim, cfg.ctx_out, cfg.ctx_out, cfg.n_heads, rng, dtype)
        self.fusion = FusionMLP(2 * cfg.ctx_out, cfg.fusion_dim, rng, dtype)
        self.dist_head = Linear(cfg.fusion_dim, 8, rng, dtype=dtype)
        self.alpha_mlps = [AlphaMLP(cfg.fusion_dim + 2, cfg.alpha_hidden, rng, dtype) for _ in range(4)]
        self.hours_head = Linear(cfg.fusion_dim, len(CLASS_VALUES), rng, dtype=dtype)
        self.gate_head = Linear(cfg.fusion_dim, 2, rng, dtype=dtype) if cfg.gated else None
        self.hours_head.bias.data[:] = np.asarray(cfg.class_prior, dtype=dtype)
        if self.gate_head is not None:
            self.gate_head.bias.data[:] = np.asarray(cfg.gate_prior, dtype=dtype)
        self._loc = np.asarray(cfg.target_loc, dtype=np.float64)
        self._scale = np.asarray(cfg.target_scale, dtype=np.float64)

    @property
    def dtype(self):
        return self.dist_head.weight.dtype

    # -- stages -------------------------------------------------------------------------

    def encode_context(self, x_ctx: Tensor) -> Tensor:
        return self.context(x_ctx)

    def encode_hourly(self, x_hourly: Tensor, return_weights: bool = False):
        return self.hourly(x_hourly, return_weights)

    def cross_attend_fuse(self, v_ctx: Tensor, tokens: Tensor, pooled: Tensor, rows: np.ndarray | None = None) -> Tensor:
        """Fuse context and hourly pattern; ``rows`` maps each sample to its hourly encoding."""
        b = v_ctx.shape[0]
        attn = self.forward_attn
        keys = attn.k_proj(tokens)
        values = attn.v_proj(tokens)
        q = attn.q_proj(v_ctx)
        counts = None if rows is None else np.bincount(rows, minlength=tokens.shape[0])
        if rows is not None and counts.min() == counts.max():
            # samples sharing an hourly row attend to its keys together as a multi-query block
            order = np.argsort(rows, kind="stable")
            grouped = take_rows(q, order).reshape(tokens.shape[0], int(counts[0]), q.shape[-1])
            attended = attn.attend(grouped, keys, values).reshape(b, -1)
            attended = take_rows(attended, np.argsort(order, kind="stable"))
        else:
            if rows is not None:
                keys, values = take_rows(keys, rows), take_rows(values, rows)
            attended = attn.attend(q.reshape(b, 1, q.shape[-1]), keys, values).reshape(b, -1)
        if rows is not None:
            pooled = take_rows(pooled, rows)
        ctx_token = v_ctx.reshape(b, 1, v_ctx.shape[-1])
        updated = self.backward_attn(pooled.reshape(b, 1, pooled.shape[-1]), ctx_token).reshape(b, -1)
        return self.fusion(concat([attended, updated], axis=-1))

    def heads(self, fused: Tensor, start_hours) -> PctnOutput:
        b = fused.shape[0]
        dtype = fused.dtype
        loc = self._loc.astype(dtype)
        scale = self._scale.astype(dtype)
        raw = self.dist_head(fused)
        mu_std = raw[:, :4]
        spread = F.softplus(raw[:, 4:])
        mu = mu_std * scale + loc
        sigma = spread * scale + MIN_SPREAD
        alphas = []
        for i, mlp in enumerate(self.alpha_mlps):
            inp = concat([fused, mu_std[:, i : i + 1], sigma[:, i : i + 1] * (1.0 / scale[i])], axis=-1)
            alphas.append(F.softplus(mlp(inp)) + MIN_ALPHA)
        alpha = concat(alphas, axis=-1)
        theta = mu + alpha * sigma

        logits = self.hours_head(fused)
        p_hours = F.softmax(logits, axis=-1)
        t1 = p_hours @ Tensor(CLASS_VALUES.astype(dtype).reshape(-1, 1))
        factor = sensitivity_factors(np.asarray(start_hours).reshape(-1)).astype(dtype).reshape(b, 1)
        t2 = theta[:, 1:2] * factor
        magnitude = F.softplus(theta[:, 2:4])
        gates = None
        if self.gate_head is not None:
            gates = F.sigmoid(self.gate_head(fused))
            fluct = gates * magnitude + FLUCT_FLOOR
        else:
            fluct = magnitude + FLUCT_FLOOR
        t_hat = concat([t1, t2, fluct], axis=-1)
        return PctnOutput(mu, sigma, alpha, theta, logits, p_hours, gates, t_hat)

    def forward(self, x_ctx, x_hourly, start_hours) -> PctnOutput:
        x_ctx = x_ctx if isinstance(x_ctx, Tensor) else Tensor(np.asarray(x_ctx, dtype=self.dtype))
        hourly_np = x_hourly.data if isinstance(x_hourly, Tensor) else np.asarray(x_hourly, dtype=self.dtype)
        if isinstance(x_hourly, Tensor) and x_hourly.requires_grad:
            unique, rows = x_hourly, None
        else:
            uniq, rows = np.unique(hourly_np, axis=0, return_inverse=True)
            rows = rows.reshape(-1)
            if len(uniq) == len(hourly_np):
                uniq, rows = hourly_np, None
            unique = Tensor(uniq)
        v_ctx = self.encode_context(x_ctx)
        tokens, pooled = self.encode_hourly(unique)
        fused = self.cross_attend_fuse(v_ctx, tokens, pooled, rows)
        return self.heads(fused, start_hours)


def pctn_loss_terms(out: PctnOutput, labels) -> list[Tensor]:
    """Component losses: hours CE, inactive pinball, two fluct pinballs, and the gate BCE if gated."""
    labels = np.asarray(labels, dtype=np.float64)
    check_labels(labels)
    dtype = out.t_hat.dtype
    y = labels.astype(dtype)
    t_hat = out.t_hat
    terms = [
        F.cross_entropy(out.hour_logits, labels[:, 0].astype(np.intp) - T1_RANGE[0]),
        F.pinball(y[:, 1], t_hat[:, 1], INACTIVE_TAU),
        F.pinball(y[:, 2], t_hat[:, 2], FLUCT_TAU),
        F.pinball(y[:, 3], t_hat[:, 3], FLUCT_TAU),
    ]
    if out.gates is not None:
        above = (labels[:, 2:4] > FLUCT_FLOOR).astype(dtype)
        terms.append(
            (F.binary_cross_entropy(out.gates[:, 0], above[:, 0]) + F.binary_cross_entropy(out.gates[:, 1], above[:, 1])) * 0.5
        )
    return terms


def pctn_loss(out: PctnOutput, labels) -> Tensor:
    terms = pctn_loss_terms(out, labels)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def split_inputs(X: np.ndarray, context_index: Sequence[int], hourly_index: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X)
    return X[:, context_index], X[:, hourly_index]


def with_priors(cfg: PctnConfig, labels: np.ndarray, start_hours: np.ndarray) -> PctnConfig:
    return replace(cfg, **label_priors(labels, start_hours))
