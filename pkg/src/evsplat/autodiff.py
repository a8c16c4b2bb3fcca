"""Minimal reverse-mode automatic differentiation over numpy arrays.

Everything trainable in this package (dense layers, warps, image losses,
quaternion algebra) is expressed through the `Tensor` class below.  The
engine is deliberately small: float64 only, eager forward evaluation, and
a closure per op for the backward pass.  Ops skip graph construction
entirely when no input requires gradients, so constant subgraphs cost a
plain numpy call.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "concat",
    "stack",
    "where",
    "atan2",
    "maximum",
    "minimum",
    "gather_pixels",
    "numeric_gradient",
]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce `grad` back to `shape` by summing the broadcast axes."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A numpy array with an optional gradient and backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------

    @staticmethod
    def _result(data, parents, backward):
        if not any(p.requires_grad for p in parents):
            return Tensor(data)
        out = Tensor(data, requires_grad=True)
        out._parents = tuple(parents)
        out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros(self.data.shape, dtype=np.float64)
        self.grad += g

    # -- backward pass ---------------------------------------------------

    def backward(self, grad=None) -> None:
        """Run reverse-mode accumulation from this tensor."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [self]
        # iterative DFS post-order to tolerate deep graphs
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            pending = [p for p in node._parents if id(p) not in seen and p.requires_grad]
            if pending:
                stack.append(node)
                stack.extend(pending)
            else:
                seen.add(id(node))
                order.append(node)
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data

        def backward(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._result(out_data, (self, other), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        out_data = self.data - other.data

        def backward(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(-g, other.data.shape))

        return Tensor._result(out_data, (self, other), backward)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data
        a_data, b_data = self.data, other.data

        def backward(g):
            self._accumulate(_unbroadcast(g * b_data, a_data.shape))
            other._accumulate(_unbroadcast(g * a_data, b_data.shape))

        return Tensor._result(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out_data = self.data / other.data
        a_data, b_data = self.data, other.data

        def backward(g):
            self._accumulate(_unbroadcast(g / b_data, a_data.shape))
            other._accumulate(_unbroadcast(-g * a_data / (b_data * b_data), b_data.shape))

        return Tensor._result(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        def backward(g):
            self._accumulate(-g)

        return Tensor._result(-self.data, (self,), backward)

    def __pow__(self, exponent: float):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data ** exponent
        base = self.data

        def backward(g):
            self._accumulate(g * exponent * base ** (exponent - 1))

        return Tensor._result(out_data, (self,), backward)

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul supports 2-D operands only")
        out_data = self.data @ other.data
        a_data, b_data = self.data, other.data

        def backward(g):
            self._accumulate(g @ b_data.T)
            other._accumulate(a_data.T @ g)

        return Tensor._result(out_data, (self, other), backward)

    # -- elementwise functions ---------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            self._accumulate(g * out_data)

        return Tensor._result(out_data, (self,), backward)

    def log(self):
        data = self.data

        def backward(g):
            self._accumulate(g / data)

        return Tensor._result(np.log(data), (self,), backward)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def backward(g):
            self._accumulate(g * 0.5 / out_data)

        return Tensor._result(out_data, (self,), backward)

    def tanh(self):
        out_data = np.tanh(self.data)

        def backward(g):
            self._accumulate(g * (1.0 - out_data * out_data))

        return Tensor._result(out_data, (self,), backward)

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def backward(g):
            self._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._result(out_data, (self,), backward)

    def relu(self):
        mask = self.data > 0

        def backward(g):
            self._accumulate(g * mask)

        return Tensor._result(self.data * mask, (self,), backward)

    def abs(self):
        sign = np.sign(self.data)

        def backward(g):
            self._accumulate(g * sign)

        return Tensor._result(np.abs(self.data), (self,), backward)

    def sin(self):
        data = self.data

        def backward(g):
            self._accumulate(g * np.cos(data))

        return Tensor._result(np.sin(data), (self,), backward)

    def cos(self):
        data = self.data

        def backward(g):
            self._accumulate(-g * np.sin(data))

        return Tensor._result(np.cos(data), (self,), backward)

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def backward(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                for ax in sorted(a % len(shape) for a in axes):
                    g = np.expand_dims(g, ax)
            self._accumulate(np.broadcast_to(g, shape).copy())

        return Tensor._result(out_data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- shape manipulation ---------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old_shape = self.data.shape

        def backward(g):
            self._accumulate(g.reshape(old_shape))

        return Tensor._result(self.data.reshape(shape), (self,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        inverse = tuple(np.argsort(axes))

        def backward(g):
            self._accumulate(g.transpose(inverse))

        return Tensor._result(self.data.transpose(axes), (self,), backward)

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, key):
        out_data = self.data[key]
        shape = self.data.shape

        def backward(g):
            full = np.zeros(shape, dtype=np.float64)
            np.add.at(full, key, g)
            self._accumulate(full)

        return Tensor._result(out_data, (self,), backward)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return Tensor._result(out_data, tensors, backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            t._accumulate(np.take(g, i, axis=axis))

    return Tensor._result(out_data, tensors, backward)


def where(mask, a, b) -> Tensor:
    """Select elementwise by a constant boolean mask."""
    mask = np.asarray(mask, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    out_data = np.where(mask, a.data, b.data)

    def backward(g):
        a._accumulate(_unbroadcast(np.where(mask, g, 0.0), a.data.shape))
        b._accumulate(_unbroadcast(np.where(mask, 0.0, g), b.data.shape))

    return Tensor._result(out_data, (a, b), backward)


def atan2(y, x) -> Tensor:
    y, x = as_tensor(y), as_tensor(x)
    y_data, x_data = y.data, x.data
    denom = y_data * y_data + x_data * x_data

    def backward(g):
        y._accumulate(_unbroadcast(g * x_data / denom, y_data.shape))
        x._accumulate(_unbroadcast(-g * y_data / denom, x_data.shape))

    return Tensor._result(np.arctan2(y_data, x_data), (y, x), backward)


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data

    def backward(g):
        a._accumulate(_unbroadcast(np.where(take_a, g, 0.0), a.data.shape))
        b._accumulate(_unbroadcast(np.where(take_a, 0.0, g), b.data.shape))

    return Tensor._result(np.maximum(a.data, b.data), (a, b), backward)


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data

    def backward(g):
        a._accumulate(_unbroadcast(np.where(take_a, g, 0.0), a.data.shape))
        b._accumulate(_unbroadcast(np.where(take_a, 0.0, g), b.data.shape))

    return Tensor._result(np.minimum(a.data, b.data), (a, b), backward)


def gather_pixels(image: Tensor, ys: np.ndarray, xs: np.ndarray) -> Tensor:
    """Pick rows `image[ys[i], xs[i], ...]` for constant integer indices."""
    ys = np.asarray(ys, dtype=np.intp)
    xs = np.asarray(xs, dtype=np.intp)
    image = as_tensor(image)
    out_data = image.data[ys, xs]
    shape = image.data.shape

    def backward(g):
        full = np.zeros(shape, dtype=np.float64)
        np.add.at(full, (ys, xs), g)
        image._accumulate(full)

    return Tensor._result(out_data, (image,), backward)


def numeric_gradient(fn, values: list[np.ndarray], eps: float = 1e-6) -> list[np.ndarray]:
    """Central finite differences of `fn(values) -> float` per array entry."""
    grads = []
    for arr in values:
        arr = np.asarray(arr, dtype=np.float64)
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn(values)
            flat[i] = orig - eps
            lo = fn(values)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads
