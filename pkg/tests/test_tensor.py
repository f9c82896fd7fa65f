import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from seapp import tensor as T
from oracles import central_diff

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def vec(n):
    return arrays(np.float64, n, elements=finite)


# ---------------------------------------------------------------- elementwise


def test_elementwise_examples():
    a = T.tensor([1.0, -2.0, 3.0])
    b = T.tensor([4.0, 5.0, -6.0])
    np.testing.assert_array_equal(T.elementwise("add", a, b).values, [5, 3, -3])
    np.testing.assert_array_equal(T.elementwise("mul", a, b).values, [4, -10, -18])
    np.testing.assert_array_equal(T.elementwise("relu", a).values, [1, 0, 3])
    np.testing.assert_array_equal(T.elementwise("scale", a, 2.0).values, [2, -4, 6])
    np.testing.assert_array_equal(T.elementwise("abs", a).values, [1, 2, 3])


def test_elementwise_broadcasts_and_unbroadcasts_grads():
    a = T.parameter(np.arange(6.0).reshape(2, 3))
    b = T.parameter([1.0, 2.0, 3.0])
    T.sum_(a * b).backward()
    np.testing.assert_array_equal(a.grad, np.tile([1.0, 2.0, 3.0], (2, 1)))
    np.testing.assert_array_equal(b.grad, [3.0, 5.0, 7.0])


def test_broadcast_mismatch_raises():
    with pytest.raises(T.ShapeError):
        T.add(T.tensor(np.ones((2, 3))), T.tensor(np.ones((4,))))


def test_log_domain_error():
    with pytest.raises(T.DomainError):
        T.log(T.tensor([1.0, 0.0]))
    with pytest.raises(T.DomainError):
        T.log(T.tensor([-1.0]))


def test_unknown_op_rejected():
    with pytest.raises(ValueError):
        T.elementwise("cube", T.tensor([1.0]))


def test_exp_gradient_matches_central_difference():
    x = np.array([0.3, -1.2, 2.0])
    p = T.parameter(x.copy())
    T.sum_(T.exp(p)).backward()
    numeric = central_diff(lambda v: sum(math.exp(t) for t in v), list(x), eps=1e-5)
    rel = np.linalg.norm(p.grad - numeric) / np.linalg.norm(numeric)
    assert rel < 1e-9
    # exact derivative of exp is exp
    np.testing.assert_allclose(p.grad, np.exp(x), rtol=1e-15)


@pytest.mark.parametrize("op", ["relu", "exp", "abs", "sigmoid", "tanh", "square", "neg"])
def test_unary_grad_check(op):
    rng = np.random.default_rng(1)
    # keep away from kinks at 0
    x = T.parameter(rng.uniform(0.2, 1.5, 5) * rng.choice([-1, 1], 5))
    assert T.grad_check(lambda: T.sum_(T.elementwise(op, x)), [x]) < 1e-7


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
def test_binary_grad_check(op):
    rng = np.random.default_rng(2)
    a = T.parameter(rng.normal(size=(3, 4)))
    b = T.parameter(rng.uniform(0.5, 2.0, size=(4,)))
    assert T.grad_check(lambda: T.sum_(T.square(T.elementwise(op, a, b))), [a, b]) < 1e-7


def test_sigmoid_is_stable_at_extremes():
    s = T.sigmoid(T.tensor([-800.0, 0.0, 800.0])).values
    assert np.all(np.isfinite(s))
    np.testing.assert_allclose(s, [0.0, 0.5, 1.0], atol=1e-300)


# ---------------------------------------------------------------- matmul


def test_matmul_example():
    a = T.tensor([[1.0, 2.0], [3.0, 4.0]])
    b = T.tensor([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal((a @ b).values, [[19, 22], [43, 50]])


def test_matmul_batched_broadcast():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(2, 3, 4, 5))
    b = rng.normal(size=(5, 2))
    out = T.matmul(a, b).values
    assert out.shape == (2, 3, 4, 2)
    np.testing.assert_allclose(out, a @ b, rtol=1e-14)


def test_matmul_inner_mismatch():
    with pytest.raises(T.ShapeError):
        T.matmul(T.tensor(np.ones((2, 3))), T.tensor(np.ones((2, 3))))


def test_matmul_grads_finite_difference():
    rng = np.random.default_rng(3)
    a = T.parameter(rng.normal(size=(2, 3, 4)))
    b = T.parameter(rng.normal(size=(4, 2)))
    w = rng.normal(size=(2, 3, 2))
    assert T.grad_check(lambda: T.sum_((a @ b) * w), [a, b]) < 1e-8


# ---------------------------------------------------------------- reductions


def test_reduce_examples():
    x = T.tensor(np.arange(6.0).reshape(2, 3))
    assert T.reduce("sum", x).item() == 15.0
    np.testing.assert_array_equal(T.reduce("mean", x, 0).values, [1.5, 2.5, 3.5])
    np.testing.assert_array_equal(T.reduce("frobenius_sq", x, 1).values, [5.0, 50.0])
    assert T.reduce("sum", x, (0, 1), keepdims=True).shape == (1, 1)


@pytest.mark.parametrize("op", ["sum", "mean", "frobenius_sq"])
@pytest.mark.parametrize("axes", [None, 0, (1, 2), -1])
def test_reduce_grad_check(op, axes):
    rng = np.random.default_rng(4)
    x = T.parameter(rng.normal(size=(2, 3, 4)))
    w = rng.normal(size=T.reduce(op, x, axes).shape)
    assert T.grad_check(lambda: T.sum_(T.reduce(op, x, axes) * w), [x]) < 1e-8


# ---------------------------------------------------------------- softmax family


def _lse_decimal(row):
    getcontext().prec = 50
    return float(sum(Decimal(v).exp() for v in row).ln())


def test_logsumexp_matches_high_precision_oracle():
    rng = np.random.default_rng(5)
    for _ in range(20):
        row = rng.normal(scale=30, size=6)
        assert T.logsumexp_lastdim(T.tensor(row)).item() == pytest.approx(_lse_decimal(row), rel=1e-14)


def test_softmax_stable_for_huge_logits():
    s = T.softmax_lastdim(T.tensor([1000.0, 1000.0, -1000.0])).values
    np.testing.assert_allclose(s, [0.5, 0.5, 0.0], atol=1e-300)
    lse = T.logsumexp_lastdim(T.tensor([1000.0, 1000.0])).item()
    assert lse == pytest.approx(1000.0 + math.log(2.0), rel=1e-15)


def test_log_softmax_consistent_with_softmax():
    x = np.random.default_rng(6).normal(size=(3, 5))
    np.testing.assert_allclose(
        np.exp(T.log_softmax_lastdim(T.tensor(x)).values), T.softmax_lastdim(T.tensor(x)).values, rtol=1e-14
    )


def test_softmax_family_grad_check():
    rng = np.random.default_rng(7)
    x = T.parameter(rng.normal(size=(2, 4)))
    w = rng.normal(size=(2, 4))
    assert T.grad_check(lambda: T.sum_(T.softmax_lastdim(x) * w), [x]) < 1e-8
    assert T.grad_check(lambda: T.sum_(T.logsumexp_lastdim(x) * w[:, 0]), [x]) < 1e-8
    assert T.grad_check(lambda: T.sum_(T.log_softmax_lastdim(x) * w), [x]) < 1e-8


# ---------------------------------------------------------------- shape ops


def test_shape_ops_grad_check():
    rng = np.random.default_rng(8)
    x = T.parameter(rng.normal(size=(2, 3, 3)))
    y = T.parameter(rng.normal(size=(2, 3, 3)))
    w = rng.normal(size=(3, 2, 3))

    def f():
        a = T.transpose(x, (1, 0, 2)) * w
        b = T.swapaxes(y, -1, -2)[:, 1:]
        c = T.stack([T.diagonal_lastdims(x), T.diagonal_lastdims(y)], axis=0)
        d = T.concat([T.reshape(x, (6, 3)), y[0]], axis=0)
        return T.sum_(a) + T.frobenius_sq(b) + T.sum_(T.square(c)) + T.sum_(T.relu(d))

    assert T.grad_check(f, [x, y]) < 1e-7


def test_fancy_index_accumulates_repeats():
    x = T.parameter([1.0, 2.0, 3.0])
    T.sum_(x[np.array([0, 0, 2])]).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 0.0, 1.0])


def test_reshape_size_mismatch():
    with pytest.raises(T.ShapeError):
        T.reshape(T.tensor(np.ones(6)), (4, 2))


# ---------------------------------------------------------------- backward


def test_backward_example():
    x = T.parameter(3.0)
    y = T.parameter(2.0)
    z = x * y + T.exp(x)  # dz/dx = y + e^x, dz/dy = x
    z.backward()
    assert x.grad == pytest.approx(2.0 + math.exp(3.0), rel=1e-15)
    assert y.grad == 3.0


def test_backward_shared_subexpression():
    x = T.parameter(2.0)
    h = x * x
    (h * h).backward()  # x^4 -> 4 x^3
    assert x.grad == 32.0


def test_backward_rejects_non_scalar():
    x = T.parameter(np.ones(3))
    with pytest.raises(T.ShapeError):
        T.backward(x * 2.0)


def test_grads_accumulate_until_zeroed():
    x = T.parameter(1.5)
    T.square(x).backward()
    T.square(x).backward()
    assert x.grad == 6.0
    T.zero_grad([x])
    assert x.grad is None


def test_only_leaf_parameters_receive_grads():
    x = T.parameter([1.0, 2.0])
    c = T.tensor([3.0, 4.0])
    mid = x * c
    T.sum_(mid).backward()
    assert mid.grad is None and c.grad is None
    np.testing.assert_array_equal(x.grad, [3.0, 4.0])


def test_no_grad_records_nothing():
    x = T.parameter(2.0)
    with T.no_grad():
        y = x * 3.0
    assert y.node is None and not y.requires_grad


def test_tape_is_topologically_ordered():
    x = T.parameter(1.0)
    a = T.exp(x)
    b = a * a
    c = b + x
    tape = T.Tape.from_root(c)
    pos = {id(t): i for i, t in enumerate(tape.tensors)}
    for t in tape.tensors:
        if t.node is not None:
            for p in t.node.parents:
                assert pos[id(p)] < pos[id(t)]
    assert [n.op for n in tape.nodes] == ["exp", "mul", "add"]


def test_detach_cuts_gradient():
    x = T.parameter(2.0)
    (T.detach(x) * x).backward()
    assert x.grad == 2.0


@settings(max_examples=60, deadline=None)
@given(vec(4), vec(4), st.floats(-3, 3), st.floats(-3, 3))
def test_gradient_is_linear_in_the_loss(xa, w, alpha, beta):
    """grad(a f + b g) = a grad f + b grad g."""
    x = T.parameter(xa)
    f = lambda: T.sum_(T.tanh(x) * w)
    g = lambda: T.frobenius_sq(T.sigmoid(x))
    T.backward(f())
    gf = x.grad.copy()
    T.zero_grad([x])
    T.backward(g())
    gg = x.grad.copy()
    T.zero_grad([x])
    T.backward(T.scale(f(), alpha) + T.scale(g(), beta))
    np.testing.assert_allclose(x.grad, alpha * gf + beta * gg, rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 3), elements=finite))
def test_backward_is_deterministic(xa):
    def run():
        x = T.parameter(xa.copy())
        T.backward(T.sum_(T.softmax_lastdim(x @ x) * xa))
        return x.grad

    np.testing.assert_array_equal(run(), run())


# ---------------------------------------------------------------- grad_check


def test_grad_check_accepts_correct_and_flags_wrong_gradients():
    x = T.parameter([0.5, -0.3])
    assert T.grad_check(lambda: T.sum_(T.exp(x)), [x]) < 1e-9

    # a hand-built op with a deliberately wrong backward
    def bad():
        return T._make(np.sum(x.values**2), "bad", (x,), lambda g: (g * x.values,))

    assert T.grad_check(bad, [x]) == pytest.approx(0.5, abs=1e-6)


def test_grad_check_restores_values():
    x = T.parameter([0.1, 0.2, 0.3])
    before = x.values.copy()
    T.grad_check(lambda: T.sum_(T.square(x)), [x])
    np.testing.assert_array_equal(x.values, before)
    assert x.grad is None


def test_relu_propagates_nan():
    assert np.isnan(T.relu(T.tensor([np.nan])).values[0])
