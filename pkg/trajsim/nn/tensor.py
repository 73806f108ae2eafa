"""Reverse-mode automatic differentiation over dense float64 arrays.

Every op is a :class:`Function` subclass. Applying it records the input
tensors as parents of the output; :meth:`Tensor.backward` walks the recorded
graph in reverse topological order and accumulates gradients into the leaf
tensors created with ``requires_grad=True``. Tensors created from plain data
are constants and never receive gradients.
"""

from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from trajsim.errors import NumericError, ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]

LAYER_NORM_EPS = 1e-5
_GELU_C = float(np.sqrt(2.0 / np.pi))


class Tensor:
    """A float64 array plus the op that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_ctx")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, _ctx: Optional["Function"] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._ctx = _ctx

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other): return Add.apply(self, other)
    def __radd__(self, other): return Add.apply(other, self)
    def __sub__(self, other): return Sub.apply(self, other)
    def __rsub__(self, other): return Sub.apply(other, self)
    def __mul__(self, other): return Mul.apply(self, other)
    def __rmul__(self, other): return Mul.apply(other, self)
    def __neg__(self): return Mul.apply(self, -1.0)
    def __matmul__(self, other): return MatMul.apply(self, other)
    def __getitem__(self, index): return GetItem.apply(self, index=index)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every grad-requiring leaf."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(_topological(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._ctx is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._ctx.parents, node._ctx.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.shape)
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def _topological(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for parent in node._ctx.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Function:
    """One differentiable op; ``forward`` sees arrays, ``backward`` returns one grad per parent."""

    def __init__(self, *parents: Tensor):
        self.parents = parents

    @classmethod
    def apply(cls, *inputs: ArrayLike, **kwargs) -> Tensor:
        tensors = tuple(as_tensor(x) for x in inputs)
        fn = cls(*tensors)
        out = np.asarray(fn.forward(*(t.data for t in tensors), **kwargs), dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"{cls.__name__} produced non-finite values")
        needs_grad = any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=needs_grad, _ctx=fn if needs_grad else None)

    def forward(self, *args, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError


def _broadcast_check(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


class Add(Function):
    def forward(self, a, b):
        _broadcast_check("add", a, b)
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    def forward(self, a, b):
        _broadcast_check("sub", a, b)
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    def forward(self, a, b):
        _broadcast_check("mul", a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
            raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ np.swapaxes(self.b, -1, -2), np.swapaxes(self.a, -1, -2) @ grad


class Permute(Function):
    def forward(self, x, axes):
        self.axes = tuple(axes)
        return np.transpose(x, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Reshape(Function):
    def forward(self, x, shape):
        self.in_shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError:
            raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class GetItem(Function):
    def forward(self, x, index):
        self.in_shape, self.index = x.shape, index
        return x[index]

    def backward(self, grad):
        out = np.zeros(self.in_shape)
        np.add.at(out, self.index, grad)
        return (out,)


class Concat(Function):
    def forward(self, *xs, axis):
        self.axis = axis
        self.shapes = [x.shape for x in xs]
        blocks = [np.atleast_2d(x) for x in xs] if axis == 0 else list(xs)
        try:
            out = np.concatenate(blocks, axis=axis)
        except ValueError:
            raise ShapeError(f"concat: shapes {self.shapes} do not conform on axis {axis}") from None
        self.sizes = [b.shape[axis] for b in blocks]
        return out

    def backward(self, grad):
        cuts = np.cumsum(self.sizes)[:-1]
        pieces = np.split(grad, cuts, axis=self.axis)
        return tuple(p.reshape(s) for p, s in zip(pieces, self.shapes))


class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.in_shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return x.sum(axis=axis, keepdims=keepdims)

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Exp(Function):
    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Sqrt(Function):
    def forward(self, x):
        if np.any(x < 0):
            raise NumericError("sqrt of a negative value")
        self.out = np.sqrt(x)
        return self.out

    def backward(self, grad):
        return (grad * 0.5 / self.out,)


class Sigmoid(Function):
    def forward(self, x):
        self.out = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Tanh(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out ** 2),)


class Gelu(Function):
    """GELU, tanh approximation."""

    def forward(self, x):
        self.x = x
        self.t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, grad):
        x, t = self.x, self.t
        dt = (1.0 - t ** 2) * _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return (grad * (0.5 * (1.0 + t) + 0.5 * x * dt),)


class Softmax(Function):
    """Softmax over the last axis with max-subtraction."""

    def forward(self, x):
        z = np.exp(x - x.max(axis=-1, keepdims=True))
        self.out = z / z.sum(axis=-1, keepdims=True)
        return self.out

    def backward(self, grad):
        y = self.out
        return (y * (grad - (grad * y).sum(axis=-1, keepdims=True)),)


class LogSoftmax(Function):
    """Log-softmax over the last axis via log-sum-exp."""

    def forward(self, x):
        shifted = x - x.max(axis=-1, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        self.softmax = np.exp(out)
        return out

    def backward(self, grad):
        return (grad - self.softmax * grad.sum(axis=-1, keepdims=True),)


class Normalize(Function):
    """Zero-mean, unit-variance rows with the variance floored at ``eps``."""

    def forward(self, x, eps=LAYER_NORM_EPS):
        if x.shape[-1] < 2:
            raise ShapeError(f"layer_norm needs at least 2 features, got shape {x.shape}")
        centered = x - x.mean(axis=-1, keepdims=True)
        var = (centered ** 2).mean(axis=-1, keepdims=True)
        self.floored = var < eps
        self.inv = 1.0 / np.sqrt(np.maximum(var, eps))
        self.out = centered * self.inv
        return self.out

    def backward(self, grad):
        g_mean = grad.mean(axis=-1, keepdims=True)
        proj = (grad * self.out).mean(axis=-1, keepdims=True)
        proj = np.where(self.floored, 0.0, proj)
        return (self.inv * (grad - g_mean - self.out * proj),)


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Add.apply(a, b)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Sub.apply(a, b)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Mul.apply(a, b)


def scale(x: ArrayLike, factor: float) -> Tensor:
    return Mul.apply(x, float(factor))


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return MatMul.apply(a, b)


def transpose(x: ArrayLike) -> Tensor:
    """Swap the last two axes."""
    x = as_tensor(x)
    axes = list(range(x.ndim))
    axes[-2], axes[-1] = axes[-1], axes[-2]
    return Permute.apply(x, axes=axes)


def permute(x: ArrayLike, axes: Sequence[int]) -> Tensor:
    return Permute.apply(x, axes=axes)


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def concat_rows(*xs: ArrayLike) -> Tensor:
    """Stack along axis 0; 1-D tensors count as single rows."""
    if len(xs) == 1 and not isinstance(xs[0], (Tensor, np.ndarray)):
        xs = tuple(xs[0])
    return Concat.apply(*xs, axis=0)


def concat_cols(*xs: ArrayLike) -> Tensor:
    if len(xs) == 1 and not isinstance(xs[0], (Tensor, np.ndarray)):
        xs = tuple(xs[0])
    return Concat.apply(*xs, axis=-1)


def sum(x: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    return Mul.apply(Sum.apply(x, axis=axis, keepdims=keepdims), 1.0 / count)


def exp(x: ArrayLike) -> Tensor:
    return Exp.apply(x)


def sqrt(x: ArrayLike) -> Tensor:
    return Sqrt.apply(x)


def sigmoid(x: ArrayLike) -> Tensor:
    return Sigmoid.apply(x)


def tanh(x: ArrayLike) -> Tensor:
    return Tanh.apply(x)


def gelu(x: ArrayLike) -> Tensor:
    return Gelu.apply(x)


def softmax_rows(x: ArrayLike) -> Tensor:
    return Softmax.apply(x)


def log_softmax_rows(x: ArrayLike) -> Tensor:
    return LogSoftmax.apply(x)


def layer_norm(x: ArrayLike, gain: ArrayLike, bias: ArrayLike, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Row-wise normalization followed by the ``gain * x + bias`` affine map."""
    return Normalize.apply(x, eps=eps) * gain + bias


def squared_error(a: ArrayLike, b: ArrayLike) -> Tensor:
    diff = sub(a, b)
    return mean(diff * diff)

