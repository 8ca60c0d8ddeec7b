from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Any, ClassVar, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np


class TensorError(Exception):
    """Raised when a tensor operation cannot be carried out."""


class ShapeError(TensorError, ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class NonFiniteError(TensorError, FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]


class Tensor:
    """Dense float64 array with an optional link to the tape that produced it.

    The data buffer is read-only once the tensor exists; only ``grad`` is written,
    and only by ``backward``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape", "_is_leaf")

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        array = np.array(data, dtype=np.float64)
        if any(dim <= 0 for dim in array.shape):
            raise ShapeError(f"tensor dims must be positive, got shape {array.shape}")
        array.setflags(write=False)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None
        self._is_leaf = True

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class OpRecord:
    function: "Function"
    inputs: Tuple[Tensor, ...]
    output: Tensor


_state = threading.local()


def _tape_stack() -> List["Tape"]:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = []
        _state.stack = stack
    return stack


class Tape:
    """Ordered record of the ops evaluated for one loss.

    Ops are recorded only while a tape is active (``with Tape() as tape:``) and at
    least one input requires a gradient. Records are appended in execution order,
    so the list is already topologically sorted.
    """

    def __init__(self) -> None:
        self.records: List[OpRecord] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc_info: Any) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        self.clear()

    @staticmethod
    def active() -> Optional["Tape"]:
        stack = _tape_stack()
        return stack[-1] if stack else None

    def record(self, record: OpRecord) -> None:
        self.records.append(record)

    def clear(self) -> None:
        self.records.clear()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.records:
            raise TensorError("backward called on an empty tape")

        pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for record in reversed(self.records):
            upstream = pending.pop(id(record.output), None)
            if upstream is None:
                continue
            input_grads = record.function.backward(upstream)
            for tensor, grad in zip(record.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor._is_leaf:
                    tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
                else:
                    key = id(tensor)
                    pending[key] = grad if key not in pending else pending[key] + grad
        self.clear()


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf that ``loss`` depends on, then free the tape."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise TensorError("loss was not recorded on a tape; nothing to differentiate")
    loss._tape.backward(loss)


class Function:
    """Base class for a differentiable op.

    ``forward`` receives raw arrays and may stash intermediates on ``self``;
    ``backward`` maps the upstream gradient to one gradient per input (or None).
    """

    name: ClassVar[str] = "function"

    def __init__(self, **options: Any):
        self.options = options

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: ArrayLike, **options: Any) -> Tensor:
        tensors = tuple(as_tensor(value) for value in inputs)
        function = cls(**options)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = function.forward(*(t.data for t in tensors))
        if not np.all(np.isfinite(out)):
            shapes = ", ".join(str(t.shape) for t in tensors)
            raise NonFiniteError(f"{cls.name} produced non-finite values (inputs {shapes})")

        tape = Tape.active()
        recorded = tape is not None and any(t.requires_grad for t in tensors)
        result = Tensor(out, requires_grad=recorded)
        if recorded:
            result._is_leaf = False
            result._tape = tape
            tape.record(OpRecord(function, tensors, result))
        return result

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, dim in enumerate(shape):
            if dim == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad
