from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

logger = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class DatasetError(ValueError):
    """Raised when a dataset cannot be built or split."""


class IdxFormatError(DatasetError):
    """Raised for malformed IDX files."""


class RingsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    num_classes: int = Field(default=4, ge=2)
    n_unlabeled: int = Field(default=4000, gt=0)
    n_labeled: int = Field(default=16, gt=0)
    n_test: int = Field(default=1000, gt=0)
    noise: float = Field(default=0.02, ge=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _balanced(self) -> "RingsConfig":
        train = self.n_unlabeled + self.n_labeled
        for label, count in (("training rows", train), ("n_test", self.n_test), ("n_labeled", self.n_labeled)):
            if count % self.num_classes:
                raise ValueError(f"{label} ({count}) must be divisible by num_classes")
        return self


@dataclass(frozen=True)
class FullDataset:
    """Fully labeled train/test rows before the semi-supervised split."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int
    train_s: Optional[np.ndarray] = None
    test_s: Optional[np.ndarray] = None
    image_shape: Optional[Tuple[int, int]] = None

    @property
    def x_dim(self) -> int:
        return int(self.train_x.shape[1])


@dataclass(frozen=True)
class DatasetSplit:
    """Unlabeled pool X, labeled pairs X_l and a labeled test set."""

    x_unlabeled: np.ndarray
    x_labeled: np.ndarray
    y_labeled: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int
    labeled_index: np.ndarray
    unlabeled_index: np.ndarray
    test_s: Optional[np.ndarray] = None
    source: Optional[FullDataset] = None

    @property
    def x_dim(self) -> int:
        return int(self.x_unlabeled.shape[1])


def rings_point(label: int, style: Union[float, np.ndarray], num_classes: int) -> np.ndarray:
    """Noise-free rings sample: radius 0.5 + s along the ray at angle 2*pi*k/C."""
    theta = 2.0 * np.pi * np.asarray(label) / num_classes
    radius = 0.5 + np.asarray(style, dtype=float)
    return np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=-1)


def rings_style(x: np.ndarray) -> np.ndarray:
    """Inverse of ``rings_point`` for noise-free data: recovers s from the radius."""
    return np.linalg.norm(np.asarray(x, dtype=float), axis=-1) - 0.5


def _stratified_rings(rng: np.random.Generator, per_class: int, config: RingsConfig):
    labels = np.repeat(np.arange(config.num_classes), per_class)
    styles = rng.uniform(0.0, 1.0, size=labels.size)
    points = rings_point(labels, styles, config.num_classes)
    points = points + rng.normal(0.0, 1.0, size=points.shape) * config.noise
    order = rng.permutation(labels.size)
    return points[order], labels[order], styles[order]


def generate_rings(config: RingsConfig) -> FullDataset:
    rng = np.random.default_rng(config.seed)
    train_rows = config.n_unlabeled + config.n_labeled
    train_x, train_y, train_s = _stratified_rings(rng, train_rows // config.num_classes, config)
    test_x, test_y, test_s = _stratified_rings(rng, config.n_test // config.num_classes, config)
    return FullDataset(
        train_x=train_x,
        train_y=train_y,
        test_x=test_x,
        test_y=test_y,
        num_classes=config.num_classes,
        train_s=train_s,
        test_s=test_s,
    )


def make_rings_dataset(config: RingsConfig, split_seed: Optional[int] = None) -> DatasetSplit:
    """Generate rings and split off ``config.n_labeled`` balanced labels (split seed defaults to ``config.seed``)."""
    seed = config.seed if split_seed is None else split_seed
    return split_labels(generate_rings(config), config.n_labeled, seed)


def split_labels(dataset: FullDataset, n: int, seed: int) -> DatasetSplit:
    """Pick n/C labeled rows per class; every other training row becomes unlabeled."""
    classes = dataset.num_classes
    if n <= 0 or n % classes:
        raise DatasetError(f"n={n} labels cannot be split evenly over {classes} classes")
    per_class = n // classes
    rng = np.random.default_rng(seed)
    chosen = []
    for label in range(classes):
        candidates = np.flatnonzero(dataset.train_y == label)
        if candidates.size < per_class:
            raise DatasetError(f"class {label} has {candidates.size} rows, need {per_class}")
        chosen.append(rng.choice(candidates, size=per_class, replace=False))
    labeled_index = np.sort(np.concatenate(chosen))
    mask = np.ones(dataset.train_y.size, dtype=bool)
    mask[labeled_index] = False
    unlabeled_index = np.flatnonzero(mask)
    return DatasetSplit(
        x_unlabeled=dataset.train_x[unlabeled_index],
        x_labeled=dataset.train_x[labeled_index],
        y_labeled=dataset.train_y[labeled_index],
        test_x=dataset.test_x,
        test_y=dataset.test_y,
        num_classes=classes,
        labeled_index=labeled_index,
        unlabeled_index=unlabeled_index,
        test_s=dataset.test_s,
        source=dataset,
    )


def _read_header(raw: bytes, path: Path, magic: int, dims: int) -> Tuple[int, ...]:
    header_size = 4 * (dims + 1)
    if len(raw) < header_size:
        raise IdxFormatError(f"{path}: file too short for an IDX header")
    header = np.frombuffer(raw[:header_size], dtype=">u4")
    actual = int(header[0])
    if actual != magic:
        raise IdxFormatError(f"{path}: wrong magic, expected 0x{magic:08x}, got 0x{actual:08x}")
    return tuple(int(v) for v in header[1:])


@dataclass(frozen=True)
class IdxArrays:
    x: np.ndarray
    y: np.ndarray
    image_shape: Tuple[int, int]


def load_idx(images_path: Union[str, Path], labels_path: Union[str, Path]) -> IdxArrays:
    images_path, labels_path = Path(images_path), Path(labels_path)
    try:
        image_raw = images_path.read_bytes()
        label_raw = labels_path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read IDX files: {exc}") from exc

    count, rows, cols = _read_header(image_raw, images_path, IDX_IMAGE_MAGIC, 3)
    (label_count,) = _read_header(label_raw, labels_path, IDX_LABEL_MAGIC, 1)
    if count != label_count:
        raise IdxFormatError(f"{count} images but {label_count} labels")

    pixels = np.frombuffer(image_raw, dtype=np.uint8, offset=16)
    labels = np.frombuffer(label_raw, dtype=np.uint8, offset=8)
    if pixels.size != count * rows * cols or labels.size != count:
        raise IdxFormatError("IDX payload size does not match its header")
    x = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    return IdxArrays(x=x, y=labels.astype(np.int64), image_shape=(rows, cols))


def make_idx_dataset(
    train_images: Union[str, Path],
    train_labels: Union[str, Path],
    test_images: Union[str, Path],
    test_labels: Union[str, Path],
    num_classes: int,
    max_train: Optional[int] = None,
    max_test: Optional[int] = None,
) -> FullDataset:
    train = load_idx(train_images, train_labels)
    test = load_idx(test_images, test_labels)
    if train.image_shape != test.image_shape:
        raise DatasetError(f"train images {train.image_shape} vs test images {test.image_shape}")
    for part in (train, test):
        if part.y.size and part.y.max() >= num_classes:
            raise DatasetError(f"label {part.y.max()} out of range for {num_classes} classes")
    logger.info("loaded IDX data: %d train, %d test rows", train.y.size, test.y.size)
    return FullDataset(
        train_x=train.x[:max_train],
        train_y=train.y[:max_train],
        test_x=test.x[:max_test],
        test_y=test.y[:max_test],
        num_classes=num_classes,
        image_shape=train.image_shape,
    )


def export_rings_csv(dataset: FullDataset, path: Union[str, Path]) -> None:
    """Write the test rows as x0,x1,y,s."""
    if dataset.test_s is None or dataset.x_dim != 2:
        raise DatasetError("only rings datasets can be exported as CSV")
    frame = pd.DataFrame(
        {
            "x0": dataset.test_x[:, 0],
            "x1": dataset.test_x[:, 1],
            "y": dataset.test_y,
            "s": dataset.test_s,
        }
    )
    frame.to_csv(path, index=False, float_format="%.17g")
