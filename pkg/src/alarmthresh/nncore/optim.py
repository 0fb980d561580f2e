"""AdamW with decoupled weight decay, a cosine schedule, and early stopping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter


@dataclass
class TrainState:
    step: int = 0
    learning_rate: float = 1e-3
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)
    best_validation_loss: float = math.inf
    epochs_without_improvement: int = 0

    @classmethod
    def for_params(cls, params, learning_rate: float = 1e-3) -> TrainState:
        return cls(
            learning_rate=learning_rate,
            first_moment=[np.zeros_like(p.data) for p in params],
            second_moment=[np.zeros_like(p.data) for p in params],
        )


def adamw_step(
    state: TrainState,
    params: list[Parameter],
    grads: list[np.ndarray | None],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One in-place AdamW update; the decay multiplies the weights, not the gradients."""
    state.step += 1
    state.learning_rate = lr
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g is None:
            continue
        dtype = p.data.dtype
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        if weight_decay:
            p.data *= dtype.type(1.0 - lr * weight_decay)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(dtype, copy=False)


class AdamW:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = list(params)
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = TrainState.for_params(self.params, lr)

    def step(self, lr: float | None = None) -> None:
        adamw_step(
            self.state,
            self.params,
            [p.grad for p in self.params],
            self.state.learning_rate if lr is None else lr,
            self.betas[0],
            self.betas[1],
            self.eps,
            self.weight_decay,
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def cosine_lr(step: int, total: int, lr_max: float, lr_min: float) -> float:
    if total <= 0:
        raise ValueError("total steps must be positive")
    progress = min(max(step, 0), total) / total
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * progress))


@dataclass
class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a 1e-6 improvement."""

    patience: int = 8
    min_delta: float = 1e-6
    best: float = math.inf
    bad_epochs: int = 0
    best_epoch: int = -1
    _epoch: int = 0

    def update(self, val_loss: float) -> bool:
        """Record one epoch's validation loss; return True when training should stop."""
        improved = val_loss < self.best - self.min_delta
        if improved:
            self.best = val_loss
            self.bad_epochs = 0
            self.best_epoch = self._epoch
        else:
            self.bad_epochs += 1
        self._epoch += 1
        return self.bad_epochs >= self.patience

    @property
    def improved_last(self) -> bool:
        return self.bad_epochs == 0


def early_stop(state: TrainState, val_loss: float, patience: int, min_delta: float = 1e-6) -> bool:
    """Functional form over a :class:`TrainState`; returns True to stop."""
    if val_loss < state.best_validation_loss - min_delta:
        state.best_validation_loss = val_loss
        state.epochs_without_improvement = 0
    else:
        state.epochs_without_improvement += 1
    return state.epochs_without_improvement >= patience
