"""Parameterised building blocks shared by both threshold models."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor


class Module:
    """Minimal container that discovers parameters by walking attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def astype(self, dtype) -> Module:
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> Parameter:
    bound = math.sqrt(1.0 / fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape).astype(dtype))


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True, dtype=np.float64):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = uniform_init(rng, (in_dim, out_dim), in_dim, dtype)
        self.bias = uniform_init(rng, (out_dim,), in_dim, dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected last dim {self.in_dim}, got {x.shape}")
        flat = x.reshape(-1, self.in_dim) if x.ndim != 2 else x
        out = flat @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out.reshape(*lead, self.out_dim) if x.ndim != 2 else out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float64):
        self.eps = eps
        self.gain = Parameter(np.ones(dim, dtype=dtype))
        self.bias = Parameter(np.zeros(dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gain, self.bias, self.eps)


class MultiHeadAttention(Module):
    """Projected multi-head attention with distinct query and key/value widths.

    The key projection has no bias: a shared offset on every key shifts all
    logits of a query equally and cannot change the softmax.
    """

    def __init__(self, q_dim: int, kv_dim: int, d_model: int, n_heads: int, rng: np.random.Generator, dtype=np.float64):
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.q_proj = Linear(q_dim, d_model, rng, dtype=dtype)
        self.k_proj = Linear(kv_dim, d_model, rng, bias=False, dtype=dtype)
        self.v_proj = Linear(kv_dim, d_model, rng, dtype=dtype)
        self.out_proj = Linear(d_model, d_model, rng, dtype=dtype)

    def attend(self, q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
        """Attention over already-projected ``q, k, v`` followed by the output projection."""
        out, weights = F.scaled_dot_product_attention(q, k, v, self.n_heads, return_weights=True)
        out = self.out_proj(out)
        return (out, weights) if return_weights else out

    def forward(self, query: Tensor, context: Tensor, return_weights: bool = False):
        return self.attend(
            self.q_proj(query), self.k_proj(context), self.v_proj(context), return_weights
        )


class TransformerEncoderLayer(Module):
    """Pre-norm block: ``x + SelfAttn(LN(x))`` then ``x + FFN(LN(x))`` with a GELU FFN."""

    def __init__(self, d_model: int, n_heads: int, ff_dim: int, rng: np.random.Generator, dtype=np.float64):
        self.norm1 = LayerNorm(d_model, dtype=dtype)
        self.attn = MultiHeadAttention(d_model, d_model, d_model, n_heads, rng, dtype)
        self.norm2 = LayerNorm(d_model, dtype=dtype)
        self.ff1 = Linear(d_model, ff_dim, rng, dtype=dtype)
        self.ff2 = Linear(ff_dim, d_model, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h)
        return x + self.ff2(F.gelu(self.ff1(self.norm2(x))))
