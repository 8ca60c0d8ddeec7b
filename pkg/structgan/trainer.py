from __future__ import annotations

import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from . import ops
from .autograd import NonFiniteError, Tape, Tensor, backward
from .config import TrainConfig, derive_seed
from .data import DatasetSplit
from .games import (
    GameLossReport,
    loss_ry,
    loss_rz,
    loss_xy_critic,
    loss_xy_gen,
    loss_xz_critic,
    loss_xz_geninf,
)
from .networks import (
    ROLES,
    NetworkParams,
    NetworkSpec,
    build_network,
    classify,
    generator_forward,
    infer_z,
    one_hot,
)
from .optim import AdamState, adam_step

logger = logging.getLogger(__name__)

SOURCE_LABELED, SOURCE_GENERATED, SOURCE_PSEUDO = 0, 1, 2


class TrainingDivergedError(RuntimeError):
    """Raised when a game's loss becomes non-finite."""

    def __init__(self, game: str, detail: str = ""):
        self.game = game
        super().__init__(f"training diverged in {game}" + (f": {detail}" if detail else ""))


class MixingError(ValueError):
    """Raised when a mixed batch cannot be assembled from its sources."""


@contextmanager
def diverges_as(game: str) -> Iterator[None]:
    """Re-raise a non-finite forward or backward pass as a divergence of ``game``."""
    try:
        yield
    except NonFiniteError as exc:
        raise TrainingDivergedError(game, str(exc)) from exc


@dataclass(frozen=True)
class PriorSpec:
    """Uniform categorical y and an isotropic z prior."""

    num_classes: int
    z_dim: int
    z_prior: str = "gaussian"

    def __post_init__(self) -> None:
        if self.num_classes < 2 or self.z_dim < 1:
            raise ValueError("priors need at least 2 classes and a positive z_dim")
        if self.z_prior not in ("gaussian", "uniform"):
            raise ValueError(f"unknown z prior {self.z_prior!r}")

    @classmethod
    def from_config(cls, config: TrainConfig) -> "PriorSpec":
        return cls(num_classes=int(config.num_classes or 0), z_dim=config.z_dim, z_prior=config.z_prior)

    def sample_y(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return one_hot(rng.integers(0, self.num_classes, size=n), self.num_classes)

    def sample_z(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.z_prior == "uniform":
            return rng.uniform(-1.0, 1.0, size=(n, self.z_dim))
        return rng.standard_normal(size=(n, self.z_dim))


@dataclass
class SGANNetworks:
    G: NetworkParams
    I: NetworkParams  # noqa: E741
    C: NetworkParams
    Dxy: NetworkParams
    Dxz: NetworkParams

    def items(self) -> List[Tuple[str, NetworkParams]]:
        return [(role, getattr(self, role)) for role in ROLES]

    def fingerprints(self) -> Dict[str, str]:
        return {role: params.fingerprint() for role, params in self.items()}


def build_specs(
    x_dim: int,
    config: TrainConfig,
    hidden: Dict[str, Tuple[int, ...]],
    g_head: str = "linear",
    leaky_slope: float = 0.2,
) -> Dict[str, NetworkSpec]:
    classes = int(config.num_classes or 0)
    common = dict(x_dim=x_dim, y_dim=classes, z_dim=config.z_dim)
    return {
        "G": NetworkSpec(role="G", hidden=hidden["G"], head=g_head, **common),
        "I": NetworkSpec(role="I", hidden=hidden["I"], **common),
        "C": NetworkSpec(role="C", hidden=hidden["C"], **common),
        "Dxy": NetworkSpec(
            role="Dxy", hidden=hidden["Dxy"], activation="leaky_relu", leaky_slope=leaky_slope, **common
        ),
        "Dxz": NetworkSpec(
            role="Dxz", hidden=hidden["Dxz"], activation="leaky_relu", leaky_slope=leaky_slope, **common
        ),
    }


def build_networks(specs: Dict[str, NetworkSpec], seed: int) -> SGANNetworks:
    return SGANNetworks(
        **{role: build_network(specs[role], derive_seed(seed, index)) for index, role in enumerate(ROLES)}
    )


@dataclass
class Optimizers:
    states: Dict[str, AdamState] = field(default_factory=dict)

    @classmethod
    def create(cls, nets: SGANNetworks, config: TrainConfig) -> "Optimizers":
        rates = {"G": config.lr_g, "I": config.lr_i, "C": config.lr_c, "Dxy": config.lr_dxy, "Dxz": config.lr_dxz}
        return cls(
            states={
                role: AdamState.for_params(params.tensors, rates[role], config.beta1, config.beta2)
                for role, params in nets.items()
            }
        )

    def update_counts(self) -> Dict[str, int]:
        return {role: state.step for role, state in self.states.items()}


@dataclass(frozen=True)
class GeneratedBatch:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class MixingPortions:
    p_label: float
    p_gen: float
    p_pseudo: float

    def __post_init__(self) -> None:
        values = (self.p_label, self.p_gen, self.p_pseudo)
        if min(values) < -1e-12 or abs(sum(values) - 1.0) > 1e-9:
            raise MixingError(f"mixing portions {values} are not a simplex point")


@dataclass(frozen=True)
class MixedBatch:
    x: np.ndarray
    y: np.ndarray
    source: np.ndarray

    def counts(self) -> Tuple[int, int, int]:
        return tuple(int(np.sum(self.source == s)) for s in (SOURCE_LABELED, SOURCE_GENERATED, SOURCE_PSEUDO))  # type: ignore[return-value]


@dataclass(frozen=True)
class BatchSources:
    x_u: np.ndarray
    x_labeled: np.ndarray
    y_labeled: np.ndarray


@dataclass
class TrainResult:
    nets: SGANNetworks
    history: List[GameLossReport]
    metrics: List[Any]
    optimizers: Optimizers


def descend(
    params: NetworkParams,
    state: AdamState,
    game: str,
    loss_fn: Callable[[NetworkParams], Tensor],
) -> Tuple[NetworkParams, float]:
    """Evaluate ``loss_fn`` on a fresh tape, backprop, and apply one Adam update to ``params``."""
    live = params.trainable()
    with diverges_as(game), Tape():
        loss = loss_fn(live)
        value = loss.item()
        backward(loss)
    if not math.isfinite(value):
        raise TrainingDivergedError(game, f"loss={value}")
    updated = adam_step(live.tensors, live.gradients(), state)
    return live.with_tensors(updated), value


def fit_classifier(
    C: NetworkParams,
    x: np.ndarray,
    y_onehot: np.ndarray,
    epochs: int,
    batch_size: int,
    state: AdamState,
    rng: np.random.Generator,
) -> Tuple[NetworkParams, List[float]]:
    """Supervised cross-entropy training; returns the classifier and per-epoch mean loss."""
    losses: List[float] = []
    rows = x.shape[0]
    for _ in range(epochs):
        order = rng.permutation(rows)
        epoch_losses = []
        for start in range(0, rows, batch_size):
            idx = order[start : start + batch_size]
            C, value = descend(C, state, "R_y", lambda c: loss_ry(c, (x[idx], y_onehot[idx]), None))
            epoch_losses.append(value)
        losses.append(float(np.mean(epoch_losses)))
    return C, losses


def pretrain_classifier(
    C: NetworkParams,
    x_labeled: np.ndarray,
    y_labeled: np.ndarray,
    epochs: int,
    lr: float = 1e-3,
    batch_size: int = 64,
    seed: int = 0,
) -> NetworkParams:
    """Minimize the labeled term of R_y only."""
    if x_labeled.shape[0] == 0:
        raise ValueError("cannot pretrain the classifier on an empty labeled set")
    if epochs == 0:
        return C
    y_onehot = y_labeled if y_labeled.ndim == 2 else one_hot(y_labeled, C.spec.y_dim)
    state = AdamState.for_params(C.tensors, lr)
    C, losses = fit_classifier(C, x_labeled, y_onehot, epochs, batch_size, state, np.random.default_rng(seed))
    logger.info("pretrained C for %d epochs: loss %.4f -> %.4f", epochs, losses[0], losses[-1])
    return C


def sample_generated(
    G: NetworkParams, priors: PriorSpec, batch_size: int, rng: np.random.Generator
) -> GeneratedBatch:
    y = priors.sample_y(rng, batch_size)
    z = priors.sample_z(rng, batch_size)
    x = generator_forward(G.frozen(), y, z).data
    return GeneratedBatch(x=x, y=y, z=z)


def sample_pseudo_labeled(
    C: NetworkParams, x_u: np.ndarray, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """(x_c, y_c) ~ p_c(x, y): y_c drawn from C(x_u) row by row."""
    probs = classify(C.frozen(), x_u).data
    cdf = np.cumsum(probs, axis=1)
    draws = rng.random((probs.shape[0], 1))
    labels = np.minimum(np.sum(cdf <= draws, axis=1), probs.shape[1] - 1)
    return x_u, one_hot(labels, probs.shape[1])


def mixing_schedule(epoch: int, config: TrainConfig) -> MixingPortions:
    start, end = config.ramp_start, config.resolved_ramp_end
    if epoch < start:
        progress = 0.0
    elif end <= start:
        progress = 1.0
    else:
        progress = min(1.0, (epoch - start) / (end - start))
    p_gen = progress * config.p_gen
    p_pseudo = progress * config.p_pseudo
    return MixingPortions(p_label=1.0 - p_gen - p_pseudo, p_gen=p_gen, p_pseudo=p_pseudo)


def _draw(rng: np.random.Generator, pool: int, count: int) -> np.ndarray:
    return rng.choice(pool, size=count, replace=pool < count)


def mix_batch(
    labeled: Tuple[np.ndarray, np.ndarray],
    generated: Tuple[np.ndarray, np.ndarray],
    pseudo: Tuple[np.ndarray, np.ndarray],
    portions: MixingPortions,
    batch_size: int,
    rng: np.random.Generator,
) -> MixedBatch:
    n_gen = int(math.floor(portions.p_gen * batch_size + 0.5))
    n_pseudo = int(math.floor(portions.p_pseudo * batch_size + 0.5))
    n_label = batch_size - n_gen - n_pseudo
    if n_label < 0:
        raise MixingError(f"portions {portions} overflow a batch of {batch_size}")

    xs, ys, sources = [], [], []
    for code, (x, y), count, name in (
        (SOURCE_LABELED, labeled, n_label, "labeled"),
        (SOURCE_GENERATED, generated, n_gen, "generated"),
        (SOURCE_PSEUDO, pseudo, n_pseudo, "pseudo-labeled"),
    ):
        if count == 0:
            continue
        if x.shape[0] == 0:
            raise MixingError(f"{name} pool is empty but {count} rows were requested")
        idx = _draw(rng, x.shape[0], count)
        xs.append(x[idx])
        ys.append(y[idx])
        sources.append(np.full(count, code))

    order = rng.permutation(batch_size)
    return MixedBatch(
        x=np.concatenate(xs)[order],
        y=np.concatenate(ys)[order],
        source=np.concatenate(sources)[order],
    )


def critic_xz_step(
    nets: SGANNetworks, state: AdamState, x_u: np.ndarray, gen: GeneratedBatch
) -> Tuple[NetworkParams, float]:
    with diverges_as("L_xz critic"):
        z_hat = infer_z(nets.I.frozen(), x_u).data
    return descend(nets.Dxz, state, "L_xz critic", lambda d: loss_xz_critic(d, (x_u, z_hat), (gen.x, gen.z)))


def critic_xy_step(
    nets: SGANNetworks, state: AdamState, mixed: MixedBatch, gen: GeneratedBatch
) -> Tuple[NetworkParams, float]:
    return descend(nets.Dxy, state, "L_xy critic", lambda d: loss_xy_critic(d, (mixed.x, mixed.y), (gen.x, gen.y)))


def inference_step(
    nets: SGANNetworks, state: AdamState, x_u: np.ndarray, gen: GeneratedBatch, config: TrainConfig
) -> Tuple[NetworkParams, float]:
    def objective(inference: NetworkParams) -> Tensor:
        real = (x_u, infer_z(inference, x_u))
        loss = loss_xz_geninf(nets.Dxz, real, (gen.x, gen.z), config.saturating_gen_loss)
        if config.use_rz:
            loss = ops.add(loss, loss_rz(inference, (gen.x, gen.z)))
        return loss

    return descend(nets.I, state, "L_xz + R_z (I)", objective)


def classifier_step(
    nets: SGANNetworks,
    state: AdamState,
    mixed: MixedBatch,
    gen: GeneratedBatch,
    config: TrainConfig,
    epoch: int,
) -> Tuple[NetworkParams, float]:
    """R_y on the real rows of the mixed batch, plus the generated term once C has joined."""
    rows = mixed.source == SOURCE_LABELED
    if config.pseudo_in_ry:
        rows = rows | (mixed.source == SOURCE_PSEUDO)
    labeled = (mixed.x[rows], mixed.y[rows]) if np.any(rows) else None
    joined = config.use_ry and epoch >= config.c_join_epoch
    generated = (gen.x, gen.y) if joined else None
    if labeled is None and generated is None:
        return nets.C, 0.0
    return descend(nets.C, state, "R_y (C)", lambda c: loss_ry(c, labeled, generated))


def generator_step(
    nets: SGANNetworks,
    state: AdamState,
    x_u: np.ndarray,
    gen: GeneratedBatch,
    config: TrainConfig,
) -> Tuple[NetworkParams, Dict[str, float]]:
    """L_xy + L_xz + R_y + R_z with equal weights, recomputing G(y, z) on the tape."""
    with diverges_as("G (L_xz)"):
        z_hat = infer_z(nets.I.frozen(), x_u).data
    classifier, inference = nets.C.frozen(), nets.I.frozen()
    parts: Dict[str, float] = {}

    def objective(G: NetworkParams) -> Tensor:
        x_g = generator_forward(G, gen.y, gen.z)
        l_xy = loss_xy_gen(nets.Dxy, (x_g, gen.y), config.saturating_gen_loss)
        l_xz = loss_xz_geninf(nets.Dxz, (x_u, z_hat), (x_g, gen.z), config.saturating_gen_loss)
        r_y = loss_ry(classifier, None, (x_g, gen.y))
        r_z = loss_rz(inference, (x_g, gen.z))
        parts.update(l_xy_gen=l_xy.item(), l_xz_geninf=l_xz.item(), r_y=r_y.item(), r_z=r_z.item())
        total = ops.add(l_xy, l_xz)
        if config.use_ry:
            total = ops.add(total, r_y)
        if config.use_rz:
            total = ops.add(total, r_z)
        return total

    G, _ = descend(nets.G, state, "G (L_xy + L_xz + R_y + R_z)", objective)
    return G, parts


def train_step(
    nets: SGANNetworks,
    optimizers: Optimizers,
    sources: BatchSources,
    config: TrainConfig,
    epoch: int,
    rng: np.random.Generator,
    step: int = 0,
) -> GameLossReport:
    """Critics, then I, C and G on one batch; ``nets`` is updated in place."""
    priors = PriorSpec.from_config(config)
    batch_size = sources.x_u.shape[0]
    with diverges_as("G sampling"):
        gen = sample_generated(nets.G, priors, batch_size, rng)
    with diverges_as("C pseudo-labeling"):
        pseudo = sample_pseudo_labeled(nets.C, sources.x_u, rng)
    mixed = mix_batch(
        (sources.x_labeled, sources.y_labeled),
        (gen.x, gen.y),
        pseudo,
        mixing_schedule(epoch, config),
        batch_size,
        rng,
    )

    states = optimizers.states
    l_xz_critic = l_xy_critic = 0.0
    for _ in range(config.k_critic):
        nets.Dxz, l_xz_critic = critic_xz_step(nets, states["Dxz"], sources.x_u, gen)
        nets.Dxy, l_xy_critic = critic_xy_step(nets, states["Dxy"], mixed, gen)

    nets.I, _ = inference_step(nets, states["I"], sources.x_u, gen, config)

    real_rows = mixed.source == SOURCE_LABELED
    r_y_labeled = 0.0
    if np.any(real_rows):
        with diverges_as("R_y (C)"):
            r_y_labeled = loss_ry(nets.C.frozen(), (mixed.x[real_rows], mixed.y[real_rows]), None).item()
    nets.C, _ = classifier_step(nets, states["C"], mixed, gen, config, epoch)

    nets.G, parts = generator_step(nets, states["G"], sources.x_u, gen, config)

    report = GameLossReport(
        l_xz_critic=l_xz_critic,
        l_xz_geninf=parts["l_xz_geninf"],
        l_xy_critic=l_xy_critic,
        l_xy_gen=parts["l_xy_gen"],
        r_y=r_y_labeled + parts["r_y"],
        r_z=parts["r_z"],
        step=step,
    )
    logger.debug("step %d: %s", step, report.losses())
    return report


EpochCallback = Callable[[int, SGANNetworks, GameLossReport], Optional[Any]]


def train(
    nets: SGANNetworks,
    dataset: DatasetSplit,
    config: TrainConfig,
    seed: int,
    on_epoch: Optional[EpochCallback] = None,
    progress: bool = False,
) -> TrainResult:
    """Pretrain C, then run ``config.epochs`` epochs of ``train_step`` over shuffled unlabeled data.

    ``on_epoch`` receives every epoch's averaged report; whatever it returns is kept in
    ``TrainResult.metrics``.
    """
    if dataset.x_unlabeled.shape[0] == 0 or dataset.x_labeled.shape[0] == 0:
        raise ValueError("training needs both an unlabeled pool and labeled pairs")
    y_labeled = one_hot(dataset.y_labeled, dataset.num_classes)
    nets.C = pretrain_classifier(
        nets.C,
        dataset.x_labeled,
        y_labeled,
        config.pretrain_epochs,
        lr=config.pretrain_lr,
        batch_size=config.batch_size,
        seed=derive_seed(seed, 0),
    )

    optimizers = Optimizers.create(nets, config)
    rng = np.random.default_rng(derive_seed(seed, 1))
    batch_size = config.batch_size
    pool = dataset.x_unlabeled.shape[0]
    steps_per_epoch = max(1, pool // batch_size)
    history: List[GameLossReport] = []
    metrics: List[Any] = []
    global_step = 0

    for epoch in tqdm(range(config.epochs), desc="epochs", disable=not progress):
        order = rng.permutation(pool) if pool >= batch_size else rng.choice(pool, batch_size)
        reports = []
        for step in range(steps_per_epoch):
            idx = order[step * batch_size : (step + 1) * batch_size]
            sources = BatchSources(x_u=dataset.x_unlabeled[idx], x_labeled=dataset.x_labeled, y_labeled=y_labeled)
            reports.append(train_step(nets, optimizers, sources, config, epoch, rng, step=global_step))
            global_step += 1
        epoch_report = GameLossReport.mean(reports, step=epoch)
        history.append(epoch_report)
        logger.info(
            "epoch %d: %s",
            epoch,
            " ".join(f"{name}={value:.4f}" for name, value in epoch_report.losses().items()),
        )
        if on_epoch is not None:
            record = on_epoch(epoch, nets, epoch_report)
            if record is not None:
                metrics.append(record)

    return TrainResult(nets=nets, history=history, metrics=metrics, optimizers=optimizers)
