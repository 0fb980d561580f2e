import math

import numpy as np
import pytest

from alarmthresh.nncore import Tensor, gradient_check
from alarmthresh.nncore import functional as F
from alarmthresh.nncore.tensor import Parameter


def _t(values):
    return Tensor(np.asarray(values, dtype=np.float64))


def test_pseudo_huber_zero_residual():
    assert F.pseudo_huber(_t([2.0]), _t([2.0]), delta=1.5).item() == 0.0


def test_pseudo_huber_worked_value():
    # residual 3, delta 2: 4 * (sqrt(1 + 2.25) - 1)
    got = F.pseudo_huber(_t([3.0]), _t([0.0]), delta=2.0).item()
    assert got == pytest.approx(4 * (math.sqrt(3.25) - 1), abs=1e-12)
    assert got == pytest.approx(3.2111, abs=1e-4)


def test_huber_branches():
    assert F.huber(_t([0.5]), _t([0.0]), 1.0).item() == pytest.approx(0.125)
    assert F.huber(_t([3.0]), _t([0.0]), 1.0).item() == pytest.approx(2.5)


def test_pinball_three_to_one_asymmetry():
    under = F.pinball(_t([4.0]), _t([2.0]), 0.75).item()
    over = F.pinball(_t([2.0]), _t([4.0]), 0.75).item()
    assert under == pytest.approx(1.5)
    assert over == pytest.approx(0.5)
    assert under / over == pytest.approx(3.0)


@pytest.mark.parametrize("tau", [0.0, 1.0, -0.2, 1.5])
def test_pinball_rejects_tau_outside_unit_interval(tau):
    with pytest.raises(ValueError):
        F.pinball(_t([1.0]), _t([0.0]), tau)


def test_quantile3_termwise():
    got = F.quantile3(_t([1.0]), _t([0.0]), _t([1.0]), _t([2.0])).item()
    assert got == pytest.approx((0.1 + 0.0 + 0.1) / 3, abs=1e-12)


def test_cross_entropy_matches_manual_log_softmax():
    logits = np.array([[1.0, 2.0, 0.5], [0.1, -0.3, 0.2]])
    classes = np.array([1, 2])
    manual = -np.mean(
        [logits[i, c] - math.log(np.exp(logits[i]).sum()) for i, c in enumerate(classes)]
    )
    assert F.cross_entropy(_t(logits), classes).item() == pytest.approx(manual, abs=1e-12)


def test_bce_clamps_extremes():
    value = F.binary_cross_entropy(_t([0.0, 1.0]), [1.0, 0.0]).item()
    assert value == pytest.approx(-math.log(1e-7), rel=1e-6)


def test_bce_matches_formula():
    p = np.array([0.2, 0.7, 0.9])
    t = np.array([0.0, 1.0, 1.0])
    expected = -np.mean(t * np.log(p) + (1 - t) * np.log(1 - p))
    assert F.binary_cross_entropy(_t(p), t).item() == pytest.approx(expected, abs=1e-12)


LOSS_CASES = {
    "pseudo_huber": lambda y, p: F.pseudo_huber(y, p, 0.7),
    "huber": lambda y, p: F.huber(y, p, 0.4),
    "pinball": lambda y, p: F.pinball(y, p, 0.75),
    "quantile3": lambda y, p: F.quantile3(y, p, p * 1.3, p * 0.6 + 0.2),
    "bce": lambda y, p: F.binary_cross_entropy(F.sigmoid(p), (y.data > 0).astype(float)),
}


@pytest.mark.parametrize("name", sorted(LOSS_CASES))
def test_loss_gradients(name):
    rng = np.random.default_rng(11)
    y = _t(rng.normal(size=8))
    p = Parameter(rng.normal(size=8))
    assert gradient_check(lambda: LOSS_CASES[name](y, p), [p]).passed


def test_cross_entropy_gradient():
    rng = np.random.default_rng(12)
    logits = Parameter(rng.normal(size=(5, 7)))
    classes = rng.integers(0, 7, size=5)
    assert gradient_check(lambda: F.cross_entropy(logits, classes), [logits]).passed


def test_cross_entropy_rejects_bad_class():
    with pytest.raises(ValueError):
        F.cross_entropy(_t(np.zeros((1, 3))), [3])
