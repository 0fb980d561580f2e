import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alarmthresh.itransformer import (
    ITransformer,
    ITransformerConfig,
    itransformer_loss,
    p90_thresholds,
    quantile_spread_report,
    sort_quantiles,
)
from alarmthresh.nncore import Tensor, gradient_check, no_grad

TINY = dict(d_model=8, layers=1, n_heads=2, ff_dim=16)


def test_output_shape_and_token_count():
    m = ITransformer(ITransformerConfig(**TINY))
    x = Tensor(np.random.default_rng(0).normal(size=(3, 123)))
    assert m(x).shape == (3, 4, 3)
    assert m.tokens(x).shape == (3, 123, 8)
    with pytest.raises(ValueError):
        m(Tensor(np.zeros((3, 122))))


def test_default_width_and_depth():
    m = ITransformer(ITransformerConfig())
    assert len(m.layers) == 4 and m.embed_weight.shape == (123, 128)


def test_loss_on_exact_quantiles_is_zero():
    y = np.array([[1.0, 2.0, 3.0, 4.0]])
    raw = Tensor(np.repeat(y[:, :, None], 3, axis=2))
    assert itransformer_loss(raw, y).item() == 0.0


def test_loss_worked_example():
    # y = 1 with quantiles (0, 1, 2): (0.1*1 + 0 + 0.1*1) / 3 per target
    raw = Tensor(np.tile(np.array([0.0, 1.0, 2.0]), (1, 4, 1)))
    assert itransformer_loss(raw, np.ones((1, 4))).item() == pytest.approx(0.2 / 3, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_loss_non_negative(seed):
    rng = np.random.default_rng(seed)
    raw = Tensor(rng.normal(size=(5, 4, 3)) * 10)
    assert itransformer_loss(raw, rng.normal(size=(5, 4)) * 10).item() >= 0.0


def test_gradient_small_model():
    m = ITransformer(ITransformerConfig(**TINY))
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(4, 123)), requires_grad=True)
    y = rng.normal(size=(4, 4))
    res = gradient_check(lambda: itransformer_loss(m(x), y), [x] + m.parameters(), max_coords=8)
    assert res.passed, res


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_sorted_quantiles_are_monotone(seed):
    m = ITransformer(ITransformerConfig(seed=seed % 5, **TINY))
    with no_grad():
        q = sort_quantiles(m(np.random.default_rng(seed).normal(size=(16, 123)) * 5))
    assert (np.diff(q, axis=-1) >= 0).all()
    np.testing.assert_array_equal(p90_thresholds(q), q[:, :, 2])


def test_feature_permutation_with_embedding_permutation_is_invariant():
    m = ITransformer(ITransformerConfig(**TINY))
    x = np.random.default_rng(2).normal(size=(3, 123))
    before = m(x).data
    perm = np.arange(123)
    perm[[5, 40]] = [40, 5]
    m.embed_weight.data = m.embed_weight.data[perm]
    m.embed_bias.data = m.embed_bias.data[perm]
    after = m(x[:, perm]).data
    np.testing.assert_allclose(before, after, atol=1e-6)


def test_spread_report_constant_model():
    q = np.tile(np.array([2.0, 2.0, 2.0]), (10, 4, 1))
    report, flags = quantile_spread_report(q)
    assert all(r["mean"] == 0 and r["n_flagged"] == 0 for r in report)
    assert not flags.any()
    assert [r["target"] for r in report] == ["t1", "t2", "t3", "t4"]


def test_spread_flags_match_brute_force():
    rng = np.random.default_rng(3)
    lo = rng.normal(size=(200, 4))
    q = np.sort(np.stack([lo, lo + rng.exponential(1, (200, 4)), lo + rng.exponential(2, (200, 4)) ** 2], axis=-1), axis=-1)
    report, flags = quantile_spread_report(q)
    for j in range(4):
        spreads = [q[i, j, 2] - q[i, j, 0] for i in range(200)]
        mean = sum(spreads) / 200
        std = (sum((s - mean) ** 2 for s in spreads) / 200) ** 0.5
        expected = [s > mean + 2 * std for s in spreads]
        assert report[j]["mean"] == pytest.approx(mean, abs=1e-9)
        assert report[j]["std"] == pytest.approx(std, abs=1e-9)
        assert flags[:, j].tolist() == expected
