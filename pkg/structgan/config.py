from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .data import RingsConfig
from .settings import ConfigError, Settings, get_settings  # noqa: F401


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TrainConfig(_Section):
    epochs: int = Field(default=200, ge=0)
    batch_size: int = Field(default=64, gt=0)
    k_critic: int = Field(default=1, ge=1)
    lr_g: float = Field(default=2e-4, gt=0)
    lr_i: float = Field(default=2e-4, gt=0)
    lr_c: float = Field(default=2e-4, gt=0)
    lr_dxy: float = Field(default=2e-4, gt=0)
    lr_dxz: float = Field(default=2e-4, gt=0)
    beta1: float = Field(default=0.5, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    pretrain_epochs: int = Field(default=500, ge=0)
    pretrain_lr: float = Field(default=1e-3, gt=0)
    c_join_epoch: int = Field(default=3, ge=0)
    ramp_start: int = Field(default=3, ge=0)
    ramp_end: Optional[int] = Field(default=None, ge=0)
    p_gen: float = Field(default=0.5, ge=0)
    p_pseudo: float = Field(default=0.25, ge=0)
    saturating_gen_loss: bool = False
    pseudo_in_ry: bool = False
    use_ry: bool = True
    use_rz: bool = True
    z_prior: Literal["gaussian", "uniform"] = "gaussian"
    z_dim: int = Field(default=2, gt=0)
    num_classes: Optional[int] = Field(default=None, ge=2)

    @model_validator(mode="after")
    def _check(self) -> "TrainConfig":
        if self.p_gen + self.p_pseudo > 0.75:
            raise ValueError("p_gen + p_pseudo must not exceed 0.75")
        if self.batch_size % 4:
            raise ValueError("batch_size must be divisible by 4")
        return self

    @property
    def resolved_ramp_end(self) -> int:
        if self.ramp_end is not None:
            return self.ramp_end
        return int(0.6 * self.epochs)


class ModelSection(_Section):
    g_hidden: List[int] = Field(default_factory=lambda: [64, 64])
    i_hidden: List[int] = Field(default_factory=lambda: [64, 64])
    c_hidden: List[int] = Field(default_factory=lambda: [64, 64])
    d_hidden: List[int] = Field(default_factory=lambda: [64, 64])
    leaky_slope: float = Field(default=0.2, ge=0)


class IdxConfig(_Section):
    train_images: Path
    train_labels: Path
    test_images: Path
    test_labels: Path
    num_classes: int = Field(default=10, ge=2)
    n_labeled: int = Field(default=20, gt=0)
    max_train: Optional[int] = Field(default=None, gt=0)
    max_test: Optional[int] = Field(default=None, gt=0)


class DatasetSection(_Section):
    type: Literal["rings", "idx"] = "rings"
    rings: RingsConfig = Field(default_factory=RingsConfig)
    idx: Optional[IdxConfig] = None

    @model_validator(mode="after")
    def _check(self) -> "DatasetSection":
        if self.type == "idx" and self.idx is None:
            raise ValueError("dataset.type is idx but no idx section was given")
        return self

    @property
    def num_classes(self) -> int:
        return self.idx.num_classes if self.type == "idx" and self.idx else self.rings.num_classes

    @property
    def n_labeled(self) -> int:
        return self.idx.n_labeled if self.type == "idx" and self.idx else self.rings.n_labeled


class EvalSection(_Section):
    num_samples: int = Field(default=1000, gt=0)
    eval_every: int = Field(default=10, ge=1)
    mp_iterations: int = Field(default=500, gt=0)
    mp_lr: float = Field(default=0.05, gt=0)
    golden_epochs: int = Field(default=30, gt=0)
    golden_lr: float = Field(default=1e-3, gt=0)
    golden_batch_size: int = Field(default=128, gt=0)
    golden_score_splits: int = Field(default=1, ge=1)


class RunConfig(_Section):
    dataset: DatasetSection = Field(default_factory=DatasetSection)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalSection = Field(default_factory=EvalSection)
    output_dir: Path = Path("runs/default")
    seed: int = 0
    checkpoint_every: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _classes(self) -> "RunConfig":
        expected = self.dataset.num_classes
        if self.train.num_classes is None:
            self.train.num_classes = expected
        elif self.train.num_classes != expected:
            raise ValueError(f"train.num_classes={self.train.num_classes} but the dataset has {expected}")
        return self


def load_run_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    try:
        return RunConfig.model_validate(raw or {})
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def config_hash(config: RunConfig) -> bytes:
    """SHA-256 over the fields that determine trained parameters."""
    payload = config.model_dump(mode="json", include={"dataset", "model", "train", "seed"})
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).digest()


def derive_seed(base: int, *keys: int) -> int:
    return int(np.random.SeedSequence([base, *keys]).generate_state(1)[0])


@dataclass(frozen=True)
class ComponentSeeds:
    data: int
    init: int
    train: int
    eval: int

    @classmethod
    def from_master(cls, seed: int) -> "ComponentSeeds":
        return cls(data=seed + 1, init=seed + 2, train=seed + 3, eval=seed + 4)


def component_seeds(config: RunConfig) -> ComponentSeeds:
    return ComponentSeeds.from_master(config.seed)


def hidden_for(model: ModelSection, role: str) -> Tuple[int, ...]:
    return tuple(
        {"G": model.g_hidden, "I": model.i_hidden, "C": model.c_hidden}.get(role, model.d_hidden)
    )
