from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Dict, Literal, Mapping, Optional, Tuple

import numpy as np

from . import ops
from .autograd import ArrayLike, ShapeError, Tensor, as_tensor

Role = Literal["G", "I", "C", "Dxy", "Dxz"]
Activation = Literal["relu", "leaky_relu", "tanh", "sigmoid", "linear"]
Head = Literal["linear", "sigmoid", "softmax"]

ROLES: Tuple[str, ...] = ("G", "I", "C", "Dxy", "Dxz")


class NetworkError(ValueError):
    """Raised for invalid network specs or inputs."""


@dataclass(frozen=True)
class NetworkSpec:
    role: Role
    x_dim: int
    y_dim: int
    z_dim: int
    hidden: Tuple[int, ...] = (64, 64)
    activation: Activation = "relu"
    head: Optional[Head] = None
    leaky_slope: float = 0.2

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise NetworkError(f"unknown network role {self.role!r}")
        for name in ("x_dim", "y_dim", "z_dim"):
            if getattr(self, name) <= 0:
                raise NetworkError(f"{self.role}: {name} must be positive")
        if any(width <= 0 for width in self.hidden):
            raise NetworkError(f"{self.role}: zero-width hidden layer in {list(self.hidden)}")
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if self.head is None:
            object.__setattr__(self, "head", _DEFAULT_HEADS[self.role])
        if self.role == "I" and self.head != "linear":
            raise NetworkError("I is a deterministic mapping and needs a linear head")
        if self.role == "C" and self.head != "softmax":
            raise NetworkError("C needs a softmax head")
        if self.role in ("Dxy", "Dxz") and self.head != "sigmoid":
            raise NetworkError(f"{self.role} needs a sigmoid head")

    @property
    def input_width(self) -> int:
        return {
            "G": self.y_dim + self.z_dim,
            "I": self.x_dim,
            "C": self.x_dim,
            "Dxy": self.x_dim + self.y_dim,
            "Dxz": self.x_dim + self.z_dim,
        }[self.role]

    @property
    def output_width(self) -> int:
        return {"G": self.x_dim, "I": self.z_dim, "C": self.y_dim, "Dxy": 1, "Dxz": 1}[self.role]

    def layer_shapes(self) -> Tuple[Tuple[int, int], ...]:
        widths = (self.input_width, *self.hidden, self.output_width)
        return tuple(zip(widths[:-1], widths[1:]))


_DEFAULT_HEADS: Dict[str, str] = {
    "G": "linear",
    "I": "linear",
    "C": "softmax",
    "Dxy": "sigmoid",
    "Dxz": "sigmoid",
}


@dataclass(frozen=True)
class NetworkParams:
    spec: NetworkSpec
    seed: int
    tensors: Dict[str, Tensor] = field(default_factory=dict)

    def with_tensors(self, tensors: Mapping[str, Tensor]) -> "NetworkParams":
        missing = set(self.tensors) - set(tensors)
        if missing:
            raise NetworkError(f"{self.spec.role}: missing parameters {sorted(missing)}")
        for name, tensor in tensors.items():
            expected = self.tensors[name].shape
            if tensor.shape != expected:
                raise ShapeError(f"{self.spec.role}.{name}: shape {tensor.shape}, expected {expected}")
            if not np.all(np.isfinite(tensor.data)):
                raise NetworkError(f"{self.spec.role}.{name}: non-finite parameter values")
        ordered = {name: tensors[name] for name in self.tensors}
        return NetworkParams(spec=self.spec, seed=self.seed, tensors=ordered)

    def frozen(self) -> "NetworkParams":
        """Same values, no gradient tracking: a stop-gradient boundary."""
        return NetworkParams(
            spec=self.spec,
            seed=self.seed,
            tensors={name: t.detach() for name, t in self.tensors.items()},
        )

    def trainable(self) -> "NetworkParams":
        return NetworkParams(
            spec=self.spec,
            seed=self.seed,
            tensors={name: Tensor(t.data, requires_grad=True) for name, t in self.tensors.items()},
        )

    def zeroed(self) -> "NetworkParams":
        return self.with_tensors({name: Tensor(np.zeros(t.shape)) for name, t in self.tensors.items()})

    def gradients(self) -> Dict[str, np.ndarray]:
        """Collect and clear the grads left by the last backward pass."""
        grads: Dict[str, np.ndarray] = {}
        for name, tensor in self.tensors.items():
            grads[name] = tensor.grad if tensor.grad is not None else np.zeros(tensor.shape)
            tensor.zero_grad()
        return grads

    def parameter_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for name, tensor in self.tensors.items():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
        return digest.hexdigest()


def build_network(spec: NetworkSpec, seed: int) -> NetworkParams:
    """Glorot-uniform weights, zero biases; a pure function of (spec, seed)."""
    rng = np.random.default_rng(seed)
    tensors: Dict[str, Tensor] = {}
    for index, (fan_in, fan_out) in enumerate(spec.layer_shapes()):
        if fan_in <= 0 or fan_out <= 0:
            raise NetworkError(f"{spec.role}: zero-width layer {index}")
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        tensors[f"dense{index}.weight"] = Tensor(weight, requires_grad=True)
        tensors[f"dense{index}.bias"] = Tensor(np.zeros((1, fan_out)), requires_grad=True)
    return NetworkParams(spec=spec, seed=seed, tensors=tensors)


def _activate(spec: NetworkSpec, value: Tensor) -> Tensor:
    if spec.activation == "relu":
        return ops.relu(value)
    if spec.activation == "leaky_relu":
        return ops.leaky_relu(value, spec.leaky_slope)
    if spec.activation == "tanh":
        return ops.tanh(value)
    if spec.activation == "sigmoid":
        return ops.sigmoid(value)
    return value


def forward_logits(params: NetworkParams, inputs: Tensor) -> Tensor:
    """MLP body up to (not including) the output head."""
    spec = params.spec
    if len(inputs.shape) != 2 or inputs.shape[-1] != spec.input_width:
        raise ShapeError(f"{spec.role}: expected input (batch, {spec.input_width}), got {inputs.shape}")
    layers = len(spec.layer_shapes())
    hidden = inputs
    for index in range(layers):
        weight = params.tensors[f"dense{index}.weight"]
        bias = params.tensors[f"dense{index}.bias"]
        hidden = ops.add(ops.matmul(hidden, weight), bias)
        if index < layers - 1:
            hidden = _activate(spec, hidden)
    return hidden


def _apply_head(spec: NetworkSpec, logits: Tensor) -> Tensor:
    if spec.head == "sigmoid":
        return ops.sigmoid(logits)
    if spec.head == "softmax":
        return ops.softmax(logits)
    return logits


def _expect_role(params: NetworkParams, *roles: str) -> None:
    if params.spec.role not in roles:
        raise NetworkError(f"expected a {'/'.join(roles)} network, got {params.spec.role}")


def _check_batch(role: str, *tensors: Tensor) -> None:
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1:
        raise ShapeError(f"{role}: batch sizes differ {[t.shape for t in tensors]}")


def check_one_hot(y: Tensor, classes: int) -> None:
    data = y.data
    if data.ndim != 2 or data.shape[1] != classes:
        raise NetworkError(f"y must have shape (batch, {classes}), got {data.shape}")
    if not (np.all((data == 0.0) | (data == 1.0)) and np.all(data.sum(axis=1) == 1.0)):
        raise NetworkError("y rows must be exact one-hot vectors")


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise NetworkError(f"labels out of range for {classes} classes")
    encoded = np.zeros((labels.shape[0], classes))
    encoded[np.arange(labels.shape[0]), labels] = 1.0
    return encoded


def generator_forward(G: NetworkParams, y: ArrayLike, z: ArrayLike) -> Tensor:
    _expect_role(G, "G")
    y, z = as_tensor(y), as_tensor(z)
    check_one_hot(y, G.spec.y_dim)
    _check_batch("G", y, z)
    return _apply_head(G.spec, forward_logits(G, ops.concat([y, z])))


def infer_z(inference: NetworkParams, x: ArrayLike) -> Tensor:
    _expect_role(inference, "I")
    return forward_logits(inference, as_tensor(x))


def classifier_logits(C: NetworkParams, x: ArrayLike) -> Tensor:
    _expect_role(C, "C")
    return forward_logits(C, as_tensor(x))


def classify(C: NetworkParams, x: ArrayLike) -> Tensor:
    return ops.softmax(classifier_logits(C, x))


def critic_logits_xy(Dxy: NetworkParams, x: ArrayLike, y: ArrayLike) -> Tensor:
    _expect_role(Dxy, "Dxy")
    x, y = as_tensor(x), as_tensor(y)
    _check_batch("Dxy", x, y)
    return forward_logits(Dxy, ops.concat([x, y]))


def critic_logits_xz(Dxz: NetworkParams, x: ArrayLike, z: ArrayLike) -> Tensor:
    _expect_role(Dxz, "Dxz")
    x, z = as_tensor(x), as_tensor(z)
    _check_batch("Dxz", x, z)
    return forward_logits(Dxz, ops.concat([x, z]))


def critic_xy(Dxy: NetworkParams, x: ArrayLike, y: ArrayLike) -> Tensor:
    return ops.sigmoid(critic_logits_xy(Dxy, x, y))


def critic_xz(Dxz: NetworkParams, x: ArrayLike, z: ArrayLike) -> Tensor:
    return ops.sigmoid(critic_logits_xz(Dxz, x, z))
