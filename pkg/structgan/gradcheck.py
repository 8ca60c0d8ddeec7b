"""Central-difference gradient checks for the op catalog, the five network forwards and the game losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Sequence, Tuple

import numpy as np

from . import ops
from .autograd import ArrayLike, Tape, Tensor, backward
from .games import loss_ry, loss_rz, loss_xy_critic, loss_xz_geninf
from .networks import (
    ROLES,
    NetworkParams,
    NetworkSpec,
    build_network,
    classify,
    critic_xy,
    critic_xz,
    generator_forward,
    infer_z,
    one_hot,
)

ScalarFn = Callable[[Dict[str, Tensor]], Tensor]
CaseBuilder = Callable[[np.random.Generator], Tuple[ScalarFn, Dict[str, np.ndarray]]]
# below this magnitude the relative error turns into an absolute one
GRAD_FLOOR = 1e-4


@dataclass(frozen=True)
class GradCheckReport:
    name: str
    max_rel_err: float
    tol: float = 1e-3

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def grad_check(
    f: ScalarFn,
    params: Mapping[str, ArrayLike],
    h: float = 1e-4,
    tol: float = 1e-3,
    name: str = "f",
) -> GradCheckReport:
    """Compare backward() against (f(p+h) - f(p-h)) / 2h for every coordinate.

    Relative error is |a - n| / max(|a|, |n|, 1e-4).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = {key: np.array(value.data if isinstance(value, Tensor) else value, dtype=float) for key, value in params.items()}
    leaves = {key: Tensor(value, requires_grad=True) for key, value in base.items()}
    with Tape():
        loss = f(leaves)
        if loss.requires_grad:
            backward(loss)
    analytic = {key: leaf.grad if leaf.grad is not None else np.zeros(leaf.shape) for key, leaf in leaves.items()}

    def evaluate(key: str, value: np.ndarray) -> float:
        inputs = {other: Tensor(array) for other, array in base.items()}
        inputs[key] = Tensor(value)
        return f(inputs).item()

    worst = 0.0
    for key, value in base.items():
        for index in np.ndindex(value.shape):
            plus, minus = value.copy(), value.copy()
            plus[index] += h
            minus[index] -= h
            numeric = (evaluate(key, plus) - evaluate(key, minus)) / (2.0 * h)
            exact = float(analytic[key][index])
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), GRAD_FLOOR)
            worst = max(worst, error)
    return GradCheckReport(name=name, max_rel_err=worst, tol=tol)


def _project(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Random linear functional of ``out`` so every output coordinate carries a distinct upstream grad."""
    return ops.reduce_sum(ops.mul(out, Tensor(rng.normal(size=out.shape))))


def _away_from_zero(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.1, 1.0, size=shape)


def _case(fn: Callable[..., Tensor], **shapes: Tuple[int, ...]) -> CaseBuilder:
    def build(rng: np.random.Generator):
        params = {key: rng.normal(size=shape) for key, shape in shapes.items()}
        seed = int(rng.integers(2**32))
        return (lambda p: _project(fn(*(p[key] for key in shapes)), np.random.default_rng(seed))), params

    return build


def _positive_case(fn: Callable[[Tensor], Tensor], shape: Tuple[int, ...], low: float, high: float) -> CaseBuilder:
    def build(rng: np.random.Generator):
        params = {"a": rng.uniform(low, high, size=shape)}
        seed = int(rng.integers(2**32))
        return (lambda p: _project(fn(p["a"]), np.random.default_rng(seed))), params

    return build


def _kinked_case(fn: Callable[[Tensor], Tensor], shape: Tuple[int, ...]) -> CaseBuilder:
    def build(rng: np.random.Generator):
        params = {"a": _away_from_zero(rng, shape)}
        seed = int(rng.integers(2**32))
        return (lambda p: _project(fn(p["a"]), np.random.default_rng(seed))), params

    return build


def _cross_entropy_case(rng: np.random.Generator):
    labels = rng.integers(0, 4, size=3)
    target = Tensor(one_hot(labels, 4))
    params = {"probs": rng.uniform(0.1, 1.0, size=(3, 4))}
    return (lambda p: ops.cross_entropy(p["probs"], target)), params


def _squared_error_case(rng: np.random.Generator):
    params = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(3, 4))}
    return (lambda p: ops.squared_error(p["a"], p["b"])), params


OP_CASES: Dict[str, CaseBuilder] = {
    "matmul": _case(ops.matmul, a=(3, 4), b=(4, 2)),
    "add": _case(ops.add, a=(3, 4), b=(1, 4)),
    "sub": _case(ops.sub, a=(3, 4), b=(3, 4)),
    "mul": _case(ops.mul, a=(3, 4), b=(1, 4)),
    "concat": _case(lambda a, b: ops.concat([a, b]), a=(3, 2), b=(3, 3)),
    "relu": _kinked_case(ops.relu, (3, 4)),
    "leaky_relu": _kinked_case(lambda a: ops.leaky_relu(a, 0.2), (3, 4)),
    "sigmoid": _case(ops.sigmoid, a=(3, 4)),
    "tanh": _case(ops.tanh, a=(3, 4)),
    "softmax": _case(ops.softmax, a=(3, 5)),
    "log_softmax": _case(ops.log_softmax, a=(3, 5)),
    "log": _positive_case(ops.log, (3, 4), 0.5, 2.0),
    "log_sigmoid": _case(ops.log_sigmoid, a=(3, 4)),
    "sum": _case(lambda a: ops.reduce_sum(a, axis=1), a=(3, 4)),
    "mean": _case(lambda a: ops.reduce_mean(a, axis=0, keepdims=True), a=(3, 4)),
    "squared_error": _squared_error_case,
    "cross_entropy": _cross_entropy_case,
}

_X_DIM, _Y_DIM, _Z_DIM, _BATCH = 3, 3, 2, 4

# inputs each role is differentiable in; y stays one-hot
NETWORK_INPUTS: Dict[str, Tuple[str, ...]] = {
    "G": ("z",),
    "I": ("x",),
    "C": ("x",),
    "Dxy": ("x",),
    "Dxz": ("x", "z"),
}


def _toy_network(role: str, rng: np.random.Generator, hidden: Tuple[int, ...] = (5, 4)) -> NetworkParams:
    head = "sigmoid" if role == "G" else None
    spec = NetworkSpec(role=role, x_dim=_X_DIM, y_dim=_Y_DIM, z_dim=_Z_DIM, hidden=hidden, activation="tanh", head=head)
    return build_network(spec, int(rng.integers(2**32)))


def _toy_batch(rng: np.random.Generator) -> Dict[str, np.ndarray]:
    return {
        "x": rng.normal(size=(_BATCH, _X_DIM)),
        "y": one_hot(rng.integers(0, _Y_DIM, size=_BATCH), _Y_DIM),
        "z": rng.normal(size=(_BATCH, _Z_DIM)),
    }


def _forward(role: str, net: NetworkParams, batch: Mapping[str, ArrayLike]) -> Tensor:
    if role == "G":
        return generator_forward(net, batch["y"], batch["z"])
    if role == "I":
        return infer_z(net, batch["x"])
    if role == "C":
        return classify(net, batch["x"])
    if role == "Dxy":
        return critic_xy(net, batch["x"], batch["y"])
    return critic_xz(net, batch["x"], batch["z"])


def _network_case(role: str) -> CaseBuilder:
    def build(rng: np.random.Generator):
        net = _toy_network(role, rng)
        batch = _toy_batch(rng)
        seed = int(rng.integers(2**32))
        params = {key: tensor.data.copy() for key, tensor in net.tensors.items()}
        return (lambda p: _project(_forward(role, net.with_tensors(p), batch), np.random.default_rng(seed))), params

    return build


def _network_input_case(role: str) -> CaseBuilder:
    def build(rng: np.random.Generator):
        net = _toy_network(role, rng)
        batch = _toy_batch(rng)
        seed = int(rng.integers(2**32))
        params = {key: batch[key] for key in NETWORK_INPUTS[role]}
        return (lambda p: _project(_forward(role, net, {**batch, **p}), np.random.default_rng(seed))), params

    return build


def _game_cases() -> Dict[str, CaseBuilder]:
    def critic_bce(rng: np.random.Generator):
        spec = NetworkSpec(role="Dxy", x_dim=_X_DIM, y_dim=_Y_DIM, z_dim=_Z_DIM, hidden=(5,), activation="sigmoid")
        net = build_network(spec, int(rng.integers(2**32)))
        real = (rng.normal(size=(_BATCH, _X_DIM)), one_hot(rng.integers(0, _Y_DIM, size=_BATCH), _Y_DIM))
        fake = (rng.normal(size=(_BATCH, _X_DIM)), one_hot(rng.integers(0, _Y_DIM, size=_BATCH), _Y_DIM))
        params = {key: tensor.data.copy() for key, tensor in net.tensors.items()}
        return (lambda p: loss_xy_critic(net.with_tensors(p), real, fake)), params

    def classifier_ce(rng: np.random.Generator):
        spec = NetworkSpec(role="C", x_dim=_X_DIM, y_dim=_Y_DIM, z_dim=_Z_DIM, hidden=(5,), activation="tanh")
        net = build_network(spec, int(rng.integers(2**32)))
        labeled = (rng.normal(size=(_BATCH, _X_DIM)), one_hot(rng.integers(0, _Y_DIM, size=_BATCH), _Y_DIM))
        params = {key: tensor.data.copy() for key, tensor in net.tensors.items()}
        return (lambda p: loss_ry(net.with_tensors(p), labeled, None)), params

    def generator_xz(rng: np.random.Generator):
        G = _toy_network("G", rng, hidden=(2,))
        Dxz = _toy_network("Dxz", rng)
        batch = _toy_batch(rng)
        real = (batch["x"], rng.normal(size=(_BATCH, _Z_DIM)))
        params = {key: tensor.data.copy() for key, tensor in G.tensors.items()}

        def loss(p: Dict[str, Tensor]) -> Tensor:
            x_g = generator_forward(G.with_tensors(p), batch["y"], batch["z"])
            return loss_xz_geninf(Dxz, real, (x_g, batch["z"]))

        return loss, params

    def reconstruction_z(rng: np.random.Generator):
        inference = _toy_network("I", rng)
        batch = _toy_batch(rng)
        params = {"x": batch["x"], "z": batch["z"]}
        return (lambda p: loss_rz(inference, (p["x"], p["z"]))), params

    return {
        "game.l_xy_critic": critic_bce,
        "game.r_y": classifier_ce,
        "game.l_xz_geninf": generator_xz,
        "game.r_z": reconstruction_z,
    }


NETWORK_CASES: Dict[str, CaseBuilder] = {f"net.{role}": _network_case(role) for role in ROLES}
NETWORK_INPUT_CASES: Dict[str, CaseBuilder] = {f"net_input.{role}": _network_input_case(role) for role in ROLES}
SUITE: Dict[str, CaseBuilder] = {**OP_CASES, **NETWORK_CASES, **NETWORK_INPUT_CASES, **_game_cases()}


def check_case(name: str, seed: int = 0, h: float = 1e-4, tol: float = 1e-3) -> GradCheckReport:
    f, params = SUITE[name](np.random.default_rng(seed))
    return grad_check(f, params, h=h, tol=tol, name=name)


def run_suite(
    seeds: Sequence[int] = (0,), h: float = 1e-4, tol: float = 1e-3, names: Sequence[str] = ()
) -> List[GradCheckReport]:
    """Worst relative error per case across ``seeds``."""
    reports = []
    for name in names or SUITE:
        worst = max((check_case(name, seed, h, tol) for seed in seeds), key=lambda r: r.max_rel_err)
        reports.append(worst)
    return reports


def format_reports(reports: Sequence[GradCheckReport]) -> str:
    width = max(len(r.name) for r in reports)
    lines = [f"{'case':<{width}}  max_rel_err  status"]
    for report in reports:
        status = "ok" if report.passed else "FAIL"
        lines.append(f"{report.name:<{width}}  {report.max_rel_err:11.3e}  {status}")
    return "\n".join(lines)
