"""Operation catalog for the autograd engine.

Every op is a ``Function`` subclass plus a thin module-level wrapper. ``CATALOG``
lists the ops the gradient-check suite must cover.
"""

from __future__ import annotations

from typing import Dict, Optional, Sequence, Tuple, Type, Union

import numpy as np
from scipy import special

from .autograd import ArrayLike, Function, ShapeError, Tensor, as_tensor

Axis = Optional[Union[int, Tuple[int, ...]]]


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from exc


class MatMul(Function):
    name = "matmul"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


class Add(Function):
    name = "add"

    def forward(self, a, b):
        _broadcast_shape(self.name, a, b)
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(grad, self.shapes[1])


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        _broadcast_shape(self.name, a, b)
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        _broadcast_shape(self.name, a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return (
            self.unbroadcast(grad * self.b, self.a.shape),
            self.unbroadcast(grad * self.a, self.b.shape),
        )


class Concat(Function):
    """Concatenation along the last axis."""

    name = "concat"

    def forward(self, *arrays):
        leading = {a.shape[:-1] for a in arrays}
        if len(leading) != 1 or any(a.ndim == 0 for a in arrays):
            raise ShapeError(f"concat: leading dims differ {[a.shape for a in arrays]}")
        self.widths = [a.shape[-1] for a in arrays]
        return np.concatenate(arrays, axis=-1)

    def backward(self, grad):
        cuts = np.cumsum(self.widths)[:-1]
        return tuple(np.split(grad, cuts, axis=-1))


class ReLU(Function):
    name = "relu"

    def forward(self, a):
        self.mask = a > 0
        return np.where(self.mask, a, 0.0)

    def backward(self, grad):
        return (grad * self.mask,)


class LeakyReLU(Function):
    name = "leaky_relu"

    def forward(self, a):
        self.slope = float(self.options.get("slope", 0.2))
        self.mask = a > 0
        return np.where(self.mask, a, self.slope * a)

    def backward(self, grad):
        return (grad * np.where(self.mask, 1.0, self.slope),)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, a):
        self.out = special.expit(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Tanh(Function):
    name = "tanh"

    def forward(self, a):
        self.out = np.tanh(a)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out**2),)


class Softmax(Function):
    name = "softmax"

    def forward(self, a):
        self.out = special.softmax(a, axis=-1)
        return self.out

    def backward(self, grad):
        s = self.out
        return (s * (grad - np.sum(grad * s, axis=-1, keepdims=True)),)


class LogSoftmax(Function):
    name = "log_softmax"

    def forward(self, a):
        out = special.log_softmax(a, axis=-1)
        self.probs = np.exp(out)
        return out

    def backward(self, grad):
        return (grad - self.probs * np.sum(grad, axis=-1, keepdims=True),)


class Log(Function):
    name = "log"

    def forward(self, a):
        self.a = a
        return np.log(a)

    def backward(self, grad):
        return (grad / self.a,)


class LogSigmoid(Function):
    """log(sigmoid(a)) without forming sigmoid(a)."""

    name = "log_sigmoid"

    def forward(self, a):
        self.a = a
        return -np.logaddexp(0.0, -a)

    def backward(self, grad):
        return (grad * special.expit(-self.a),)


class Sum(Function):
    name = "sum"

    def forward(self, a):
        self.axis = self.options.get("axis")
        self.keepdims = bool(self.options.get("keepdims", False))
        self.shape = a.shape
        return np.sum(a, axis=self.axis, keepdims=self.keepdims)

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape),)


class Mean(Function):
    name = "mean"

    def forward(self, a):
        self.axis = self.options.get("axis")
        self.keepdims = bool(self.options.get("keepdims", False))
        self.shape = a.shape
        out = np.mean(a, axis=self.axis, keepdims=self.keepdims)
        self.count = a.size // max(np.size(out), 1)
        return out

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad / self.count, self.shape),)


class SquaredError(Function):
    """Mean of squared differences over all elements."""

    name = "squared_error"

    def forward(self, a, b):
        if a.shape != b.shape:
            raise ShapeError(f"squared_error: shapes differ {a.shape} vs {b.shape}")
        self.diff = a - b
        return np.mean(self.diff**2)

    def backward(self, grad):
        g = grad * 2.0 * self.diff / self.diff.size
        return g, -g


class CrossEntropy(Function):
    """Mean over rows of -sum(onehot * log(probs))."""

    name = "cross_entropy"

    def forward(self, probs, onehot):
        if probs.shape != onehot.shape or probs.ndim != 2:
            raise ShapeError(f"cross_entropy: shapes differ {probs.shape} vs {onehot.shape}")
        self.probs, self.onehot = probs, onehot
        self.rows = probs.shape[0]
        self.log_probs = np.where(onehot != 0, np.log(probs), 0.0)
        return -np.sum(onehot * self.log_probs) / self.rows

    def backward(self, grad):
        g_probs = -grad * np.where(self.onehot != 0, self.onehot / self.probs, 0.0) / self.rows
        g_onehot = -grad * self.log_probs / self.rows
        return g_probs, g_onehot


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return MatMul.apply(a, b)


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Add.apply(a, b)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Sub.apply(a, b)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Mul.apply(a, b)


def neg(a: ArrayLike) -> Tensor:
    return Mul.apply(a, -1.0)


def concat(tensors: Sequence[ArrayLike]) -> Tensor:
    return Concat.apply(*tensors)


def relu(a: ArrayLike) -> Tensor:
    return ReLU.apply(a)


def leaky_relu(a: ArrayLike, slope: float = 0.2) -> Tensor:
    return LeakyReLU.apply(a, slope=slope)


def sigmoid(a: ArrayLike) -> Tensor:
    return Sigmoid.apply(a)


def tanh(a: ArrayLike) -> Tensor:
    return Tanh.apply(a)


def softmax(a: ArrayLike) -> Tensor:
    return Softmax.apply(a)


def log_softmax(a: ArrayLike) -> Tensor:
    return LogSoftmax.apply(a)


def log(a: ArrayLike) -> Tensor:
    return Log.apply(a)


def log_sigmoid(a: ArrayLike) -> Tensor:
    return LogSigmoid.apply(a)


def reduce_sum(a: ArrayLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def reduce_mean(a: ArrayLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    return Mean.apply(a, axis=axis, keepdims=keepdims)


def squared_error(a: ArrayLike, b: ArrayLike) -> Tensor:
    return SquaredError.apply(a, b)


def cross_entropy(probs: ArrayLike, onehot: ArrayLike) -> Tensor:
    return CrossEntropy.apply(probs, onehot)


def cross_entropy_with_logits(logits: ArrayLike, onehot: ArrayLike) -> Tensor:
    """Same value as ``cross_entropy(softmax(logits), onehot)``, computed in log space."""
    logits, onehot = as_tensor(logits), as_tensor(onehot)
    if logits.shape != onehot.shape:
        raise ShapeError(f"cross_entropy: shapes differ {logits.shape} vs {onehot.shape}")
    picked = reduce_sum(mul(log_softmax(logits), onehot), axis=-1)
    return neg(reduce_mean(picked))


CATALOG: Dict[str, Type[Function]] = {
    fn.name: fn
    for fn in (
        MatMul,
        Add,
        Sub,
        Mul,
        Concat,
        ReLU,
        LeakyReLU,
        Sigmoid,
        Tanh,
        Softmax,
        LogSoftmax,
        Log,
        LogSigmoid,
        Sum,
        Mean,
        SquaredError,
        CrossEntropy,
    )
}
