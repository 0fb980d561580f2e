"""Two-sample and paired nonparametric tests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import kolmogorov, ndtr
from scipy.stats import rankdata

EXACT_MAX_N = 12


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int
    method: str
    degenerate: bool = False


@dataclass(frozen=True)
class KSResult:
    statistic: float
    p_value: float


def _signed_ranks(errors_a, errors_b):
    a = np.asarray(errors_a, dtype=np.float64)
    b = np.asarray(errors_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and of equal length")
    d = a - b
    d = d[d != 0.0]
    return d, rankdata(np.abs(d))


def _exact_two_sided(doubled_ranks: np.ndarray, t_doubled: int) -> float:
    """P(min(W+, W-) <= T) under random signs, by counting subset sums of doubled ranks."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks.astype(np.int64):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    w_plus = np.arange(total + 1)
    extreme = (w_plus <= t_doubled) | (w_plus >= total - t_doubled)
    return float(counts[extreme].sum() / counts.sum())


def wilcoxon_signed_rank(errors_a, errors_b) -> WilcoxonResult:
    """Two-sided signed-rank test; exact up to 12 non-zero pairs, normal approximation beyond."""
    d, ranks = _signed_ranks(errors_a, errors_b)
    n = d.size
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "degenerate", degenerate=True)
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    t = min(w_plus, w_minus)
    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        return WilcoxonResult(t, _exact_two_sided(doubled, int(round(2 * t))), n, "exact")
    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_sizes**3 - tie_sizes)) / 48.0
    if var <= 0:
        return WilcoxonResult(t, 1.0, n, "normal", degenerate=True)
    z = min(0.0, (t - mean + 0.5) / math.sqrt(var))
    return WilcoxonResult(t, float(min(1.0, 2.0 * ndtr(z))), n, "normal")


def ks_statistic(x, y) -> float:
    """Largest gap between the two empirical CDFs over the pooled sample points."""
    x = np.sort(np.asarray(x, dtype=np.float64))
    y = np.sort(np.asarray(y, dtype=np.float64))
    if x.size == 0 or y.size == 0:
        raise ValueError("KS test needs two non-empty samples")
    pooled = np.concatenate([x, y])
    # integer numerators keep the statistic exactly rounded
    cx = np.searchsorted(x, pooled, side="right").astype(np.int64)
    cy = np.searchsorted(y, pooled, side="right").astype(np.int64)
    return float(np.max(np.abs(cx * y.size - cy * x.size))) / (x.size * y.size)


def ks_two_sample(x, y) -> KSResult:
    d = ks_statistic(x, y)
    n, m = len(x), len(y)
    en = math.sqrt(n * m / (n + m))
    p = float(kolmogorov((en + 0.12 + 0.11 / en) * d))
    return KSResult(d, min(1.0, max(0.0, p)))
