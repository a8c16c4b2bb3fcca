"""Finite-difference checks for every autodiff op."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evsplat.autodiff import (
    Tensor,
    atan2,
    concat,
    gather_pixels,
    maximum,
    minimum,
    numeric_gradient,
    stack,
    where,
)


def check_gradient(build, arrays, tol=1e-6, eps=1e-6):
    """Compare backward() against central differences on `arrays`."""
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*leaves)
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in leaves]

    def f(values):
        consts = [Tensor(v) for v in values]
        return build(*consts).item()

    numeric = numeric_gradient(f, [t.data for t in leaves], eps=eps)
    for a, n in zip(analytic, numeric):
        np.testing.assert_allclose(a, n, rtol=tol, atol=tol)


RNG = np.random.default_rng(0)


class TestElementwise:
    def test_add_mul_broadcast(self):
        a = RNG.random((3, 4))
        b = RNG.random((1, 4))
        check_gradient(lambda x, y: ((x + y) * (x - 0.5)).sum(), [a, b])

    def test_div_pow(self):
        a = RNG.random((5,)) + 0.5
        b = RNG.random((5,)) + 0.5
        check_gradient(lambda x, y: (x / y + x ** 3).sum(), [a, b])

    def test_unary_chain(self):
        a = RNG.random((4, 3)) * 0.8 + 0.1
        check_gradient(
            lambda x: (x.exp() + x.log() + x.sqrt() + x.tanh() + x.sigmoid()).sum(), [a],
            tol=1e-5,
        )

    def test_trig(self):
        a = RNG.random((6,)) * 2 - 1
        check_gradient(lambda x: (x.sin() * x.cos()).sum(), [a])

    def test_abs_relu_away_from_kink(self):
        a = RNG.random((5,)) + 0.2
        check_gradient(lambda x: (x.abs() + x.relu()).sum(), [a])
        check_gradient(lambda x: ((-x).abs() + (-x).relu()).sum(), [a])

    def test_atan2(self):
        y = RNG.random((4,)) + 0.3
        x = RNG.random((4,)) + 0.3
        check_gradient(lambda a, b: atan2(a, b).sum(), [y, x])

    def test_maximum_minimum(self):
        a = RNG.random((5,))
        b = a + 0.1  # keep away from the tie
        check_gradient(lambda x, y: (maximum(x, y) + minimum(x, y)).sum(), [a, b])


class TestShapeOps:
    def test_matmul(self):
        a = RNG.random((3, 4))
        b = RNG.random((4, 2))
        check_gradient(lambda x, y: (x @ y).sum(), [a, b])

    def test_matmul_rejects_vectors(self):
        with pytest.raises(ValueError):
            Tensor(np.zeros(3)) @ Tensor(np.zeros(3))

    def test_reshape_transpose(self):
        a = RNG.random((2, 6))
        check_gradient(lambda x: (x.reshape(3, 4).T * 2.0).sum(), [a])

    def test_getitem_slices(self):
        a = RNG.random((5, 6))
        check_gradient(lambda x: (x[1:4, ::2] ** 2).sum(), [a])

    def test_getitem_fancy_rows_with_duplicates(self):
        a = RNG.random((5, 3))
        idx = np.array([0, 2, 2, 4])
        check_gradient(lambda x: (x[idx] ** 2).sum(), [a])

    def test_concat_stack(self):
        a = RNG.random((2, 3))
        b = RNG.random((2, 3))
        check_gradient(lambda x, y: concat([x, y], axis=1).sum(), [a, b])
        check_gradient(lambda x, y: (stack([x, y], axis=0) ** 2).sum(), [a, b])

    def test_sum_mean_axes(self):
        a = RNG.random((3, 4, 2))
        check_gradient(lambda x: x.sum(axis=(0, 2)).mean(), [a])
        check_gradient(lambda x: x.mean(axis=1, keepdims=True).sum(), [a])

    def test_where(self):
        a = RNG.random((4, 4))
        b = RNG.random((4, 4))
        mask = a > 0.5
        check_gradient(lambda x, y: where(mask, x * 2, y + 1).sum(), [a, b])

    def test_gather_pixels(self):
        img = RNG.random((5, 6, 2))
        ys = np.array([0, 4, 2, 2])
        xs = np.array([1, 5, 3, 3])
        check_gradient(lambda x: (gather_pixels(x, ys, xs) ** 2).sum(), [img])


class TestEngine:
    def test_constant_graphs_are_skipped(self):
        a = Tensor(np.ones(3))
        out = (a * 2 + 1).sum()
        assert not out.requires_grad
        assert out._backward is None

    def test_grad_accumulates_across_uses(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = x * 3 + x * 4
        y.backward(np.array([1.0]))
        assert x.grad[0] == 7.0

    def test_backward_requires_scalar_without_seed(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (x * 2).backward()

    def test_detach_blocks_gradient(self):
        x = Tensor(np.ones(3), requires_grad=True)
        out = (x.detach() * x).sum()
        out.backward()
        np.testing.assert_allclose(x.grad, np.ones(3))

    def test_deep_chain_does_not_overflow(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        y = x
        for _ in range(3000):
            y = y + 1.0
        y.backward(np.array([1.0]))
        assert x.grad[0] == 1.0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=1, max_value=6), st.integers(min_value=1, max_value=6),
           st.integers(min_value=0, max_value=2**31 - 1))
    def test_random_expression_gradients(self, rows, cols, seed):
        rng = np.random.default_rng(seed)
        a = rng.random((rows, cols)) + 0.5
        b = rng.random((rows, cols)) + 0.5
        check_gradient(
            lambda x, y: ((x * y).tanh() + (x / y).sigmoid() * 0.5).mean(), [a, b],
            tol=1e-5,
        )
