"""Evaluation protocols: disentanglement probe, golden-classifier metrics, transfer and interpolation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import entropy

from . import ops
from .autograd import Tape, Tensor, backward
from .config import EvalSection
from .data import DatasetSplit, FullDataset
from .games import LOSS_FIELDS, GameLossReport
from .networks import (
    NetworkParams,
    NetworkSpec,
    build_network,
    classify,
    generator_forward,
    infer_z,
    one_hot,
)
from .optim import AdamState, adam_step
from .trainer import PriorSpec, SGANNetworks, fit_classifier

logger = logging.getLogger(__name__)

METRIC_FIELDS: Tuple[str, ...] = ("test_error", "mp", "conditional_accuracy", "golden_score")


class EvaluationError(ValueError):
    """Raised when an evaluation protocol gets invalid inputs."""


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    l_xz_critic: Optional[float] = None
    l_xz_geninf: Optional[float] = None
    l_xy_critic: Optional[float] = None
    l_xy_gen: Optional[float] = None
    r_y: Optional[float] = None
    r_z: Optional[float] = None
    test_error: Optional[float] = None
    mp: Optional[float] = None
    conditional_accuracy: Optional[float] = None
    golden_score: Optional[float] = None
    num_classes: Optional[int] = None

    def __post_init__(self) -> None:
        for name in ("test_error", "mp", "conditional_accuracy"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise EvaluationError(f"{name}={value} is outside [0, 1]")
        if self.golden_score is not None:
            upper = self.num_classes if self.num_classes is not None else math.inf
            if not 1.0 <= self.golden_score <= upper:
                raise EvaluationError(f"golden_score={self.golden_score} is outside [1, {upper}]")

    @classmethod
    def from_report(cls, report: GameLossReport, **metrics: Optional[float]) -> "MetricsRecord":
        return cls(epoch=report.step, **report.losses(), **metrics)

    @property
    def evaluated(self) -> bool:
        return self.test_error is not None

    def metrics(self) -> Dict[str, Optional[float]]:
        return {name: getattr(self, name) for name in METRIC_FIELDS}

    def to_json(self) -> str:
        payload = {"epoch": self.epoch}
        payload.update({name: getattr(self, name) for name in LOSS_FIELDS})
        payload.update(self.metrics())
        return json.dumps(payload, sort_keys=True)


@dataclass(frozen=True)
class GoldenClassifier:
    params: NetworkParams
    test_accuracy: float


def accuracy(C: NetworkParams, x: np.ndarray, labels: np.ndarray) -> float:
    predictions = np.argmax(classify(C.frozen(), x).data, axis=1)
    return float(np.mean(predictions == np.asarray(labels)))


def golden_spec(x_dim: int, num_classes: int, hidden: Sequence[int] = (64, 64)) -> NetworkSpec:
    # z_dim is unused by a classifier but must be positive
    return NetworkSpec(role="C", x_dim=x_dim, y_dim=num_classes, z_dim=1, hidden=tuple(hidden))


def train_golden_classifier(
    dataset: FullDataset,
    seed: int,
    hidden: Sequence[int] = (64, 64),
    epochs: int = 30,
    lr: float = 1e-3,
    batch_size: int = 128,
) -> GoldenClassifier:
    """Fully supervised classifier on every training label; an oracle for generated samples."""
    params = build_network(golden_spec(dataset.x_dim, dataset.num_classes, hidden), seed)
    state = AdamState.for_params(params.tensors, lr)
    rng = np.random.default_rng(seed)
    targets = one_hot(dataset.train_y, dataset.num_classes)
    logger.info("golden classifier: initial test accuracy %.4f", accuracy(params, dataset.test_x, dataset.test_y))
    params, _ = fit_classifier(params, dataset.train_x, targets, epochs, batch_size, state, rng)
    held_out = accuracy(params, dataset.test_x, dataset.test_y)
    logger.info("golden classifier: test accuracy %.4f after %d epochs", held_out, epochs)
    return GoldenClassifier(params=params, test_accuracy=held_out)


def mp_from_features(
    features: np.ndarray, labels: np.ndarray, classes: int, iterations: int = 500, lr: float = 0.05
) -> float:
    """Training accuracy of a full-batch multinomial logistic probe from features to labels."""
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] != labels.shape[0] or features.shape[0] == 0:
        raise EvaluationError(f"features {features.shape} do not match labels {labels.shape}")
    scale = features.std(axis=0)
    standardized = (features - features.mean(axis=0)) / np.where(scale > 0, scale, 1.0)

    inputs = Tensor(standardized)
    targets = one_hot(labels, classes)
    params = {
        "weight": Tensor(np.zeros((features.shape[1], classes)), requires_grad=True),
        "bias": Tensor(np.zeros((1, classes)), requires_grad=True),
    }
    state = AdamState.for_params(params, lr, beta1=0.9)
    for _ in range(iterations):
        with Tape():
            logits = ops.add(ops.matmul(inputs, params["weight"]), params["bias"])
            backward(ops.cross_entropy_with_logits(logits, targets))
        params = adam_step(params, {name: t.grad for name, t in params.items()}, state)

    logits = standardized @ params["weight"].data + params["bias"].data
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def mp_measure(
    inference: NetworkParams,
    x: np.ndarray,
    labels: np.ndarray,
    classes: int,
    iterations: int = 500,
    lr: float = 0.05,
) -> float:
    z_hat = infer_z(inference.frozen(), x).data
    return mp_from_features(z_hat, labels, classes, iterations, lr)


def _generate(G: NetworkParams, priors: PriorSpec, num_samples: int, rng: np.random.Generator):
    labels = rng.integers(0, priors.num_classes, size=num_samples)
    z = priors.sample_z(rng, num_samples)
    x = generator_forward(G.frozen(), one_hot(labels, priors.num_classes), z).data
    return x, labels


def conditional_accuracy(
    G: NetworkParams, golden: GoldenClassifier, priors: PriorSpec, num_samples: int, rng: np.random.Generator
) -> float:
    x, labels = _generate(G, priors, num_samples, rng)
    return accuracy(golden.params, x, labels)


def semi_sup_error(C: NetworkParams, x: np.ndarray, labels: np.ndarray) -> float:
    return 1.0 - accuracy(C, x, labels)


def golden_score_from_probs(probs: np.ndarray, splits: int = 1) -> Tuple[float, float]:
    """exp(mean KL(p(y|x) || p(y))) per split; returns (mean, std) across splits."""
    probs = np.asarray(probs, dtype=float)
    if splits < 1 or probs.shape[0] < splits:
        raise EvaluationError(f"cannot split {probs.shape[0]} samples into {splits} parts")
    classes = probs.shape[1]
    scores = []
    for part in np.array_split(probs, splits):
        marginal = np.broadcast_to(part.mean(axis=0), part.shape)
        kl = entropy(part, marginal, axis=1)
        scores.append(float(np.clip(np.exp(np.mean(kl)), 1.0, classes)))
    return float(np.mean(scores)), float(np.std(scores))


def golden_score_spread(
    G: NetworkParams,
    golden: GoldenClassifier,
    priors: PriorSpec,
    num_samples: int,
    rng: np.random.Generator,
    splits: int = 1,
) -> Tuple[float, float]:
    x, _ = _generate(G, priors, num_samples, rng)
    return golden_score_from_probs(classify(golden.params.frozen(), x).data, splits)


def golden_score(
    G: NetworkParams,
    golden: GoldenClassifier,
    priors: PriorSpec,
    num_samples: int,
    rng: np.random.Generator,
    splits: int = 1,
) -> float:
    return golden_score_spread(G, golden, priors, num_samples, rng, splits)[0]


def style_transfer(
    G: NetworkParams, inference: NetworkParams, x_source: np.ndarray, target_classes: Sequence[int]
) -> np.ndarray:
    """G(y, I(x)) for every source row and target class; shape (sources, targets, x_dim)."""
    x_source = np.atleast_2d(np.asarray(x_source, dtype=float))
    targets = np.asarray(list(target_classes), dtype=np.int64)
    if targets.size == 0:
        raise EvaluationError("style_transfer needs at least one target class")
    z = infer_z(inference.frozen(), x_source).data
    rows, count = z.shape[0], targets.size
    y = one_hot(np.tile(targets, rows), G.spec.y_dim)
    out = generator_forward(G.frozen(), y, np.repeat(z, count, axis=0)).data
    return out.reshape(rows, count, -1)


def interpolate(
    G: NetworkParams, label: int, z_start: np.ndarray, z_end: np.ndarray, steps: int
) -> np.ndarray:
    if steps < 2:
        raise EvaluationError(f"interpolation needs at least 2 steps, got {steps}")
    z_start = np.asarray(z_start, dtype=float).reshape(1, -1)
    z_end = np.asarray(z_end, dtype=float).reshape(1, -1)
    t = np.arange(steps, dtype=float).reshape(-1, 1) / (steps - 1)
    z = z_start + t * (z_end - z_start)
    y = one_hot(np.full(steps, label), G.spec.y_dim)
    return generator_forward(G.frozen(), y, z).data


def transfer_consistency(
    G: NetworkParams,
    inference: NetworkParams,
    golden: GoldenClassifier,
    sources: np.ndarray,
    classes: Sequence[int],
) -> float:
    """Fraction of (source, target) transfers the golden classifier assigns to the target."""
    out = style_transfer(G, inference, sources, classes)
    targets = np.tile(np.asarray(list(classes)), out.shape[0])
    return accuracy(golden.params, out.reshape(-1, out.shape[-1]), targets)


def interpolation_consistency(
    G: NetworkParams,
    golden: GoldenClassifier,
    priors: PriorSpec,
    steps: int,
    pairs: int,
    rng: np.random.Generator,
) -> float:
    hits, total = 0, 0
    for _ in range(pairs):
        label = int(rng.integers(0, priors.num_classes))
        z_start, z_end = priors.sample_z(rng, 2)
        path = interpolate(G, label, z_start, z_end, steps)
        predictions = np.argmax(classify(golden.params.frozen(), path).data, axis=1)
        hits += int(np.sum(predictions == label))
        total += steps
    return hits / total


def evaluate(
    nets: SGANNetworks,
    golden: GoldenClassifier,
    dataset: DatasetSplit,
    priors: PriorSpec,
    config: EvalSection,
    seed: int,
    report: Optional[GameLossReport] = None,
    epoch: int = 0,
) -> MetricsRecord:
    """All four metrics with a fresh rng from ``seed``, so repeated calls agree exactly."""
    rng = np.random.default_rng(seed)
    metrics = dict(
        test_error=semi_sup_error(nets.C, dataset.test_x, dataset.test_y),
        mp=mp_measure(nets.I, dataset.test_x, dataset.test_y, dataset.num_classes, config.mp_iterations, config.mp_lr),
        conditional_accuracy=conditional_accuracy(nets.G, golden, priors, config.num_samples, rng),
        golden_score=golden_score(nets.G, golden, priors, config.num_samples, rng, config.golden_score_splits),
        num_classes=dataset.num_classes,
    )
    if report is not None:
        return MetricsRecord.from_report(report, **metrics)
    return MetricsRecord(epoch=epoch, **metrics)
