"""Reverse-mode gradients checked against central finite differences."""

import numpy as np
import pytest

from flowcast.autodiff import Tensor, parameter, softmax, stack

EPS = 1e-6
TOL = 1e-6


def randn(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


def numeric_grad(fn, x, eps=EPS):
    """Central finite differences of scalar fn at array x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        hi = fn(x)
        flat[k] = orig - eps
        lo = fn(x)
        flat[k] = orig
        gf[k] = (hi - lo) / (2 * eps)
    return g


def check_grad(build, x0):
    x0 = np.asarray(x0, dtype=np.float64)
    t = Tensor(x0.copy(), requires_grad=True)
    build(t).backward()
    expected = numeric_grad(lambda x: float(build(Tensor(x)).data), x0.copy())
    np.testing.assert_allclose(t.grad, expected, atol=TOL, rtol=1e-4)


def kink_free(shape):
    """Deterministic values bounded away from zero (safe for elu/relu)."""
    n = int(np.prod(shape))
    return (np.linspace(-2.0, 2.0, n).reshape(shape) + 0.013)


def test_elementwise_arithmetic_gradients():
    y0 = randn((3, 4), seed=1) + 3.0
    check_grad(lambda t: ((t * 2.0 + 1.5) / Tensor(y0) - t).sum(), randn((3, 4), seed=2))
    check_grad(lambda t: (-t + t * t).mean(), randn((3, 4), seed=3))


def test_division_gradients_both_sides():
    a0 = randn((2, 3), seed=4) + 5.0
    b0 = randn((2, 3), seed=5) + 5.0
    a = Tensor(a0.copy(), requires_grad=True)
    b = Tensor(b0.copy(), requires_grad=True)
    (a / b).sum().backward()
    na = numeric_grad(lambda x: float((Tensor(x) / Tensor(b0)).sum().data), a0.copy())
    nb = numeric_grad(lambda x: float((Tensor(a0) / Tensor(x)).sum().data), b0.copy())
    np.testing.assert_allclose(a.grad, na, atol=TOL)
    np.testing.assert_allclose(b.grad, nb, atol=TOL)


def test_activation_gradients():
    check_grad(lambda t: t.exp().sum(), 0.5 * randn((3, 4), seed=6))
    check_grad(lambda t: t.tanh().sum(), randn((3, 4), seed=7))
    check_grad(lambda t: t.sigmoid().sum(), randn((3, 4), seed=8))
    check_grad(lambda t: t.elu().sum(), kink_free((3, 4)))
    check_grad(lambda t: t.leaky_relu(0.2).sum(), kink_free((3, 4)))


def test_reduction_gradients_with_axes():
    check_grad(lambda t: t.sum(axis=0).mean(), randn((3, 4), seed=9))
    check_grad(lambda t: t.mean(axis=1, keepdims=True).sum(), randn((3, 4), seed=10))
    check_grad(lambda t: (t.sum(axis=1, keepdims=True) * t).sum(), randn((3, 4), seed=11))


def test_matmul_gradients():
    a0 = randn((4, 3), seed=12)
    b0 = randn((3, 5), seed=13)
    a = Tensor(a0.copy(), requires_grad=True)
    b = Tensor(b0.copy(), requires_grad=True)
    (a @ b).sum().backward()
    na = numeric_grad(lambda x: float((Tensor(x) @ Tensor(b0)).sum().data), a0.copy())
    nb = numeric_grad(lambda x: float((Tensor(a0) @ Tensor(x)).sum().data), b0.copy())
    np.testing.assert_allclose(a.grad, na, atol=TOL)
    np.testing.assert_allclose(b.grad, nb, atol=TOL)


def test_batched_matmul_broadcasts_over_heads():
    # (heads, 1, f, d) weights applied to a (1, batch, n, f) input.
    x0 = randn((1, 2, 3, 4), seed=14)
    w0 = randn((5, 1, 4, 2), seed=15)
    w = Tensor(w0.copy(), requires_grad=True)
    (Tensor(x0) @ w).sum().backward()
    nw = numeric_grad(lambda v: float((Tensor(x0) @ Tensor(v)).sum().data), w0.copy())
    np.testing.assert_allclose(w.grad, nw, atol=TOL)


def test_broadcast_add_unbroadcasts_gradient():
    x0 = randn((4, 3), seed=16)
    b = Tensor(randn(3, seed=17), requires_grad=True)
    (Tensor(x0) + b).sum().backward()
    assert b.grad.shape == (3,)
    np.testing.assert_allclose(b.grad, np.full(3, 4.0), atol=TOL)


def test_reused_tensor_accumulates_gradient():
    x = Tensor(np.array([[2.0, 3.0]]), requires_grad=True)
    y = (x * x + x).sum()   # dy/dx = 2x + 1
    y.backward()
    np.testing.assert_allclose(x.grad, [[5.0, 7.0]])


def test_shape_ops_gradients():
    check_grad(lambda t: t.reshape(2, 6).sum(axis=0).mean(), randn((3, 4), seed=18))
    check_grad(lambda t: t.transpose((1, 0, 2)).sum(), randn((2, 3, 4), seed=19))
    check_grad(lambda t: (t.transpose((2, 0, 1)) * 2.0).mean(), randn((2, 3, 4), seed=20))


def test_select_gradient_hits_one_slice():
    x = Tensor(randn((3, 2), seed=21), requires_grad=True)
    (x.select(1) * 3.0).sum().backward()
    expected = np.zeros((3, 2))
    expected[1] = 3.0
    np.testing.assert_allclose(x.grad, expected)


def test_stack_gradient_routes_to_sources():
    parts = [Tensor(randn(3, seed=22 + k), requires_grad=True) for k in range(4)]
    (stack(parts).select(2) * 5.0).sum().backward()
    np.testing.assert_allclose(parts[2].grad, np.full(3, 5.0))
    np.testing.assert_allclose(parts[0].grad, np.zeros(3))


def test_softmax_rows_sum_to_one_and_gradcheck():
    out = softmax(Tensor(randn((3, 4), seed=26)), axis=-1)
    np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)
    check_grad(lambda t: (softmax(t, axis=-1) * np.arange(4.0)).sum(),
               randn((3, 4), seed=27))


def test_masked_softmax_confines_support():
    mask = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0]])
    out = softmax(Tensor(randn((2, 3), seed=28)), axis=-1, mask=mask)
    assert out.data[0, 2] == 0.0 and out.data[1, 1] == 0.0
    np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)
    # Masked entries receive no probability and no gradient flows to them.
    check_grad(lambda t: (softmax(t, axis=-1, mask=mask) * np.arange(3.0)).sum(),
               randn((2, 3), seed=29))


def test_masked_softmax_ignores_masked_logit_values():
    mask = np.array([[1.0, 1.0, 0.0]])
    a = softmax(Tensor(np.array([[1.0, 2.0, 3.0]])), axis=-1, mask=mask)
    b = softmax(Tensor(np.array([[1.0, 2.0, 999.0]])), axis=-1, mask=mask)
    np.testing.assert_allclose(a.data, b.data, atol=1e-12)


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(AssertionError, match="scalar"):
        (x * 2.0).backward()


def test_parameter_initialization_bounds_and_determinism():
    p1 = parameter(None, rng=np.random.default_rng(11), fan_in=16, shape=(4, 4))
    p2 = parameter(None, rng=np.random.default_rng(11), fan_in=16, shape=(4, 4))
    assert p1.requires_grad
    assert np.array_equal(p1.data, p2.data)
    assert (np.abs(p1.data) <= 0.25).all()
    fixed = parameter(np.zeros(3))
    assert fixed.requires_grad and (fixed.data == 0).all()
