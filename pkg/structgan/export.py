from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .evaluation import MetricsRecord
from .games import LOSS_FIELDS

METRICS_COLUMNS: Tuple[str, ...] = ("epoch", *LOSS_FIELDS, "test_error", "mp", "cond_acc", "golden_score")
FLOAT_FORMAT = "%.17g"


class MetricsWriter:
    """Append-only metrics.csv; the header is written once when the run starts."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(columns=list(METRICS_COLUMNS)).to_csv(self.path, index=False)
        self.rows = 0

    @staticmethod
    def row(record: MetricsRecord) -> Dict[str, Optional[float]]:
        values: Dict[str, Optional[float]] = {"epoch": record.epoch}
        values.update({name: getattr(record, name) for name in LOSS_FIELDS})
        values.update(
            test_error=record.test_error,
            mp=record.mp,
            cond_acc=record.conditional_accuracy,
            golden_score=record.golden_score,
        )
        return values

    def append(self, record: MetricsRecord) -> None:
        frame = pd.DataFrame([self.row(record)], columns=list(METRICS_COLUMNS))
        frame.to_csv(self.path, mode="a", header=False, index=False, float_format=FLOAT_FORMAT)
        self.rows += 1


def read_csv(path: Union[str, Path]) -> pd.DataFrame:
    """Read a CSV written with FLOAT_FORMAT back to the same float64 values."""
    return pd.read_csv(path, float_precision="round_trip")


def read_metrics(path: Union[str, Path]) -> pd.DataFrame:
    return read_csv(path)


def write_samples_csv(
    path: Union[str, Path],
    samples: np.ndarray,
    conditions: Sequence[int],
    extra: Optional[Dict[str, Sequence[int]]] = None,
) -> Path:
    """One row per sample: x0..x{d-1}, then any ``extra`` columns, then the condition."""
    samples = np.asarray(samples, dtype=float).reshape(len(conditions), -1)
    frame = pd.DataFrame(samples, columns=[f"x{i}" for i in range(samples.shape[1])])
    for name, values in (extra or {}).items():
        frame[name] = list(values)
    frame["condition"] = list(conditions)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def to_bytes(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=float) * 255.0), 0, 255).astype(np.uint8)


def tile_images(samples: np.ndarray, image_shape: Tuple[int, int], pad: int = 1) -> np.ndarray:
    """Lay a (rows, cols, h*w) block of flat images out as one 2-D grid with ``pad`` pixels of gap."""
    rows, cols = samples.shape[:2]
    height, width = image_shape
    grid = np.zeros((rows * (height + pad) - pad, cols * (width + pad) - pad))
    for r in range(rows):
        for c in range(cols):
            top, left = r * (height + pad), c * (width + pad)
            grid[top : top + height, left : left + width] = samples[r, c].reshape(height, width)
    return grid


def write_pgm(path: Union[str, Path], image: np.ndarray) -> Path:
    """Binary PGM (P5, maxval 255) from a 2-D array of values in [0, 1]."""
    pixels = to_bytes(image)
    height, width = pixels.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes())
    return path
