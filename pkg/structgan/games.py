"""The four SGAN objectives, split by role, plus closed-form critic references.

Critic-side losses are negated so every player minimizes. Generator/inference
side losses default to the non-saturating ``-log D`` form.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import special

from . import ops
from .autograd import ArrayLike, Tape, Tensor, as_tensor, backward
from .networks import (
    NetworkParams,
    check_one_hot,
    classifier_logits,
    critic_logits_xy,
    critic_logits_xz,
    infer_z,
)
from .optim import AdamState, adam_step

Pair = Tuple[ArrayLike, ArrayLike]

LOSS_FIELDS: Tuple[str, ...] = ("l_xz_critic", "l_xz_geninf", "l_xy_critic", "l_xy_gen", "r_y", "r_z")


class GameError(ValueError):
    """Raised when a game is evaluated on invalid inputs."""


@dataclass(frozen=True)
class GameLossReport:
    l_xz_critic: float
    l_xz_geninf: float
    l_xy_critic: float
    l_xy_gen: float
    r_y: float
    r_z: float
    step: int = 0

    def __post_init__(self) -> None:
        for name in LOSS_FIELDS:
            if not math.isfinite(getattr(self, name)):
                raise GameError(f"{name} is not finite")
        if self.r_y < 0 or self.r_z < 0:
            raise GameError("reconstruction losses must be non-negative")

    def losses(self) -> Dict[str, float]:
        values = asdict(self)
        return {name: values[name] for name in LOSS_FIELDS}

    @classmethod
    def mean(cls, reports: "list[GameLossReport]", step: int) -> "GameLossReport":
        if not reports:
            raise GameError("cannot average an empty list of reports")
        return cls(
            **{name: float(np.mean([getattr(r, name) for r in reports])) for name in LOSS_FIELDS},
            step=step,
        )


@dataclass(frozen=True)
class DiscreteDistPair:
    p: Tuple[float, ...]
    q: Tuple[float, ...]

    def __post_init__(self) -> None:
        p, q = np.asarray(self.p, dtype=float), np.asarray(self.q, dtype=float)
        if p.shape != q.shape or p.ndim != 1 or p.size == 0:
            raise GameError("P and Q must be non-empty vectors over the same support")
        for label, dist in (("P", p), ("Q", q)):
            if np.any(dist < 0) or abs(dist.sum() - 1.0) > 1e-9:
                raise GameError(f"{label} is not a probability vector")
        object.__setattr__(self, "p", tuple(float(v) for v in p))
        object.__setattr__(self, "q", tuple(float(v) for v in q))

    @property
    def support_size(self) -> int:
        return len(self.p)


@dataclass(frozen=True)
class OptimalCritic:
    d_star: np.ndarray
    value: float


def _rows(name: str, *values: ArrayLike) -> Tuple[Tensor, ...]:
    tensors = []
    for value in values:
        if np.shape(value.data if isinstance(value, Tensor) else value)[:1] in ((), (0,)):
            raise GameError(f"{name}: empty batch")
        tensors.append(as_tensor(value))
    return tuple(tensors)


def _constant(value: ArrayLike) -> Tensor:
    return value.detach() if isinstance(value, Tensor) else Tensor(value)


def _log_d(logits: Tensor) -> Tensor:
    return ops.reduce_mean(ops.log_sigmoid(logits))


def _log_one_minus_d(logits: Tensor) -> Tensor:
    return ops.reduce_mean(ops.log_sigmoid(ops.neg(logits)))


def loss_xz_critic(Dxz: NetworkParams, real: Pair, fake: Pair) -> Tensor:
    """-[E log Dxz(x_u, I(x_u)) + E log(1 - Dxz(G(y,z), z))]; only Dxz receives gradient."""
    x_u, z_hat = _rows("loss_xz_critic", *real)
    x_g, z = _rows("loss_xz_critic", *fake)
    real_logits = critic_logits_xz(Dxz, _constant(x_u), _constant(z_hat))
    fake_logits = critic_logits_xz(Dxz, _constant(x_g), _constant(z))
    return ops.neg(ops.add(_log_d(real_logits), _log_one_minus_d(fake_logits)))


def loss_xz_geninf(Dxz: NetworkParams, real: Pair, fake: Pair, saturating: bool = False) -> Tensor:
    """G/I side of L_xz with the critic frozen.

    Gradients reach I through the real pair's code and G through the fake pair's x.
    """
    x_u, z_hat = _rows("loss_xz_geninf", *real)
    x_g, z = _rows("loss_xz_geninf", *fake)
    critic = Dxz.frozen()
    real_logits = critic_logits_xz(critic, x_u, z_hat)
    fake_logits = critic_logits_xz(critic, x_g, z)
    if saturating:
        return ops.add(_log_d(real_logits), _log_one_minus_d(fake_logits))
    return ops.neg(ops.add(_log_d(fake_logits), _log_one_minus_d(real_logits)))


def loss_xy_critic(Dxy: NetworkParams, real: Pair, fake: Pair) -> Tensor:
    x_m, y_m = _rows("loss_xy_critic", *real)
    x_g, y_g = _rows("loss_xy_critic", *fake)
    real_logits = critic_logits_xy(Dxy, _constant(x_m), _constant(y_m))
    fake_logits = critic_logits_xy(Dxy, _constant(x_g), _constant(y_g))
    return ops.neg(ops.add(_log_d(real_logits), _log_one_minus_d(fake_logits)))


def loss_xy_gen(Dxy: NetworkParams, fake: Pair, saturating: bool = False) -> Tensor:
    x_g, y_g = _rows("loss_xy_gen", *fake)
    fake_logits = critic_logits_xy(Dxy.frozen(), x_g, y_g)
    if saturating:
        return _log_one_minus_d(fake_logits)
    return ops.neg(_log_d(fake_logits))


def loss_ry(C: NetworkParams, labeled: Optional[Pair], generated: Optional[Pair]) -> Tensor:
    """Cross-entropy of C on labeled pairs plus on generated pairs.

    Either term may be omitted by passing None. The generated x carries G's graph
    when the caller built it under a tape.
    """
    if labeled is None and generated is None:
        raise GameError("loss_ry needs at least one of the labeled or generated terms")
    terms = []
    for name, pair in (("labeled", labeled), ("generated", generated)):
        if pair is None:
            continue
        x, y = _rows(f"loss_ry ({name})", *pair)
        check_one_hot(y, C.spec.y_dim)
        terms.append(ops.cross_entropy_with_logits(classifier_logits(C, x), y))
    return terms[0] if len(terms) == 1 else ops.add(terms[0], terms[1])


def loss_rz(inference: NetworkParams, generated: Pair) -> Tensor:
    """Mean over the batch of (1/z_dim) * ||I(x_g) - z||^2."""
    x_g, z = _rows("loss_rz", *generated)
    return ops.squared_error(infer_z(inference, x_g), z)


def critic_objective(pair: DiscreteDistPair, d: np.ndarray) -> float:
    """sum P log D + sum Q log(1 - D), with 0 log 0 = 0."""
    p, q = np.asarray(pair.p), np.asarray(pair.q)
    d = np.asarray(d, dtype=float)
    return float(np.sum(special.xlogy(p, d)) + np.sum(special.xlogy(q, 1.0 - d)))


def optimal_critic_reference(pair: DiscreteDistPair) -> OptimalCritic:
    p, q = np.asarray(pair.p), np.asarray(pair.q)
    total = p + q
    d_star = np.divide(p, total, out=np.zeros_like(p), where=total > 0)
    return OptimalCritic(d_star=d_star, value=critic_objective(pair, d_star))


def fit_tabular_critic(
    pair: DiscreteDistPair, steps: int = 3000, lr: float = 0.02, seed: int = 0
) -> OptimalCritic:
    """Train one critic logit per support point on the exact expectation."""
    p, q = Tensor(pair.p), Tensor(pair.q)
    rng = np.random.default_rng(seed)
    logits = Tensor(rng.normal(0.0, 0.1, size=pair.support_size), requires_grad=True)
    state = AdamState.for_params({"logits": logits}, lr=lr)
    for _ in range(steps):
        with Tape():
            real = ops.reduce_sum(ops.mul(p, ops.log_sigmoid(logits)))
            fake = ops.reduce_sum(ops.mul(q, ops.log_sigmoid(ops.neg(logits))))
            loss = ops.neg(ops.add(real, fake))
            backward(loss)
        grads = {"logits": logits.grad}
        logits = adam_step({"logits": logits}, grads, state)["logits"]
    d = ops.sigmoid(logits.detach()).data
    return OptimalCritic(d_star=d.copy(), value=critic_objective(pair, d))
