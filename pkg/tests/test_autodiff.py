import zlib

import numpy as np
import pytest

from alarmthresh.nncore import Tensor, concat, gradient_check, no_grad, stack, take_rows, where
from alarmthresh.nncore import functional as F
from alarmthresh.nncore.tensor import Parameter


def _param(rng, *shape, low=-1.0, high=1.0):
    return Parameter(rng.uniform(low, high, size=shape))


def test_sum_gradient_is_ones():
    x = Parameter(np.arange(6.0).reshape(2, 3))
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_quadratic_form_gradient_is_twice_x():
    x = Parameter(np.array([[1.5], [-2.0], [0.25]]))
    (x.T @ x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_accumulates_across_calls():
    x = Parameter(np.array([1.0, 2.0]))
    (x * x).sum().backward()
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_backward_needs_scalar():
    x = Parameter(np.ones(3))
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_no_grad_records_nothing():
    x = Parameter(np.ones(3))
    with no_grad():
        y = (x * 3.0).sum()
    assert not y.requires_grad


def test_shared_subexpression_counts_both_paths():
    x = Parameter(np.array([3.0]))
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_allclose(x.grad, [12.0])


def test_deep_chain_does_not_recurse():
    x = Parameter(np.array([1.0]))
    y = x
    for _ in range(5000):
        y = y * 1.0
    y.sum().backward()
    np.testing.assert_allclose(x.grad, [1.0])


UNARY_OPS = {
    "neg": lambda a: -a,
    "exp": lambda a: a.exp(),
    "log": lambda a: (a * a + 0.5).log(),
    "sqrt": lambda a: (a * a + 0.5).sqrt(),
    "abs": lambda a: a.abs(),
    "pow": lambda a: (a * a + 0.3) ** 1.7,
    "sum_axis": lambda a: a.sum(axis=1),
    "mean_keepdims": lambda a: a.mean(axis=0, keepdims=True),
    "reshape": lambda a: a.reshape(4, 3),
    "transpose": lambda a: a.transpose(1, 0),
    "getitem_slice": lambda a: a[1:, ::2],
    "getitem_fancy": lambda a: a[np.array([0, 2, 2]), np.array([1, 0, 1])],
    "rtruediv": lambda a: 1.0 / (a * a + 1.0),
    "rsub": lambda a: 2.0 - a,
    "gelu": F.gelu,
    "softplus": F.softplus,
    "sigmoid": F.sigmoid,
    "relu": F.relu,
    "softmax": lambda a: F.softmax(a, axis=-1),
    "softmax_axis0": lambda a: F.softmax(a, axis=0),
    "log_softmax": lambda a: F.log_softmax(a, axis=-1),
    "layer_norm_plain": lambda a: F.layer_norm(a),
    "clamp": lambda a: F.clamp(a, -0.5, 0.5),
    "take_rows": lambda a: take_rows(a, np.array([2, 0, 2, 1])),
}


@pytest.mark.parametrize("name", sorted(UNARY_OPS))
def test_unary_gradients(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    x = _param(rng, 3, 4)
    # keep clear of kinks for abs/relu/clamp
    x.data[np.abs(x.data) < 0.05] += 0.1
    x.data[np.abs(np.abs(x.data) - 0.5) < 0.05] += 0.1
    out = UNARY_OPS[name](x)
    w = rng.normal(size=out.shape)
    result = gradient_check(lambda: (UNARY_OPS[name](x) * Tensor(w)).sum(), [x])
    assert result.passed, (name, result.max_rel_error)


BINARY_OPS = {
    "add_broadcast": (lambda a, b: a + b, (3, 4), (4,)),
    "sub_broadcast": (lambda a, b: a - b, (3, 4), (3, 1)),
    "mul": (lambda a, b: a * b, (3, 4), (3, 4)),
    "div": (lambda a, b: a / (b * b + 1.0), (3, 4), (1, 4)),
    "matmul": (lambda a, b: a @ b, (3, 4), (4, 2)),
    "batched_matmul": (lambda a, b: a @ b, (2, 3, 4), (4, 5)),
    "batched_matmul_both": (lambda a, b: a @ b, (2, 3, 4), (2, 4, 2)),
    "concat": (lambda a, b: concat([a, b], axis=-1), (3, 4), (3, 2)),
    "stack": (lambda a, b: stack([a, b * 2.0], axis=1), (3, 4), (3, 4)),
    "where": (lambda a, b: where(np.eye(3, 4, dtype=bool), a, b), (3, 4), (3, 4)),
}


@pytest.mark.parametrize("name", sorted(BINARY_OPS))
def test_binary_gradients(name):
    op, sa, sb = BINARY_OPS[name]
    rng = np.random.default_rng(len(name))
    a, b = _param(rng, *sa), _param(rng, *sb)
    w = rng.normal(size=op(a, b).shape)
    result = gradient_check(lambda: (op(a, b) * Tensor(w)).sum(), [a, b])
    assert result.passed, (name, result.max_rel_error)


def test_layer_norm_affine_gradients():
    rng = np.random.default_rng(3)
    x, g, b = _param(rng, 2, 3, 5), _param(rng, 5), _param(rng, 5)
    w = Tensor(rng.normal(size=(2, 3, 5)))
    assert gradient_check(lambda: (F.layer_norm(x, g, b) * w).sum(), [x, g, b]).passed


def test_linear_map_check_is_nearly_exact():
    rng = np.random.default_rng(4)
    x, W = _param(rng, 4, 3), _param(rng, 3, 2)
    result = gradient_check(lambda: (x @ W).sum(), [x, W])
    assert result.max_rel_error < 1e-7


def test_corrupted_gradient_is_caught():
    def scaled_square(t):
        a = t.data
        return Tensor._result(a * a, (t,), lambda g: (g * 2.0 * a * 1.01,))

    x = Parameter(np.array([0.7, -1.3, 2.1]))
    result = gradient_check(lambda: scaled_square(x).sum(), [x])
    assert not result.passed
    assert result.max_rel_error > 1e-3


def test_gradient_check_rejects_float32():
    x = Parameter(np.ones(2, dtype=np.float32))
    with pytest.raises(TypeError):
        gradient_check(lambda: x.sum(), [x])


def test_float32_stays_float32():
    x = Parameter(np.ones((2, 2), dtype=np.float32))
    y = F.gelu(x * 2.0 + 1.0) / 3.0
    assert y.dtype == np.float32


def test_resolution_floor_scales_with_function_value():
    from alarmthresh.nncore.gradcheck import resolution_floor

    assert resolution_floor(0.0, 1e-5, 1e-4) == pytest.approx(2 * np.finfo(float).eps / 1e-9)
    assert resolution_floor(100.0, 1e-5, 1e-4) == pytest.approx(100 * resolution_floor(1.0, 1e-5, 1e-4))


def test_tiny_correct_gradient_passes_and_small_wrong_one_fails():
    x = Parameter(np.array([0.3, 0.8]))
    offset = Tensor(np.array([2.0]))
    # gradient 1e-8 next to an O(1) function value: below what differences can resolve
    assert gradient_check(lambda: (x * 1e-8).sum() + offset.sum(), [x]).passed

    def skewed(t):
        a = t.data
        return Tensor._result(a * 1e-3, (t,), lambda g: (g * 1e-3 * 1.01,))

    assert not gradient_check(lambda: skewed(x).sum() + offset.sum(), [x]).passed
