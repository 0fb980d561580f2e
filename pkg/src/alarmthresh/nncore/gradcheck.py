"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckResult:
    passed: bool
    max_rel_error: float
    worst: tuple[int, tuple] | None = None
    n_checked: int = 0

    def __bool__(self) -> bool:
        return self.passed


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(floor, abs(analytic) + abs(numeric))


def resolution_floor(f_value: float, eps: float, tol: float) -> float:
    """Gradient size below which central differences cannot reach ``tol``.

    Rounding the function value perturbs the difference quotient by about
    ``ulp(f) / eps``; gradients smaller than that over ``tol`` are compared
    against this floor instead of their own magnitude.
    """
    return max(1e-8, 2.0 * np.finfo(np.float64).eps * max(1.0, abs(f_value)) / (eps * tol))


def gradient_check(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckResult:
    """Compare ``backward()`` gradients of ``fn()`` with central differences.

    ``fn`` closes over ``inputs`` and returns a scalar tensor. Every input
    must be float64. With ``max_coords`` set, that many coordinates per input
    are drawn at random instead of sweeping all of them.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("gradient checks require float64 inputs")
        t.data = np.ascontiguousarray(t.data)
        t.grad = None
    out = fn()
    floor = resolution_floor(out.item(), eps, tol)
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    worst_err, worst_at, n_checked = 0.0, None, 0
    with no_grad():
        for which, t in enumerate(inputs):
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            for i in coords:
                original = flat[i]
                flat[i] = original + eps
                f_plus = fn().item()
                flat[i] = original - eps
                f_minus = fn().item()
                flat[i] = original
                numeric = (f_plus - f_minus) / (2.0 * eps)
                err = relative_error(float(analytic[which].reshape(-1)[i]), numeric, floor)
                n_checked += 1
                if err > worst_err:
                    worst_err = err
                    worst_at = (which, np.unravel_index(i, t.shape))
    return GradCheckResult(worst_err < tol, worst_err, worst_at, n_checked)
