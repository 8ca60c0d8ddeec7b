from __future__ import annotations

from pathlib import Path

import pytest
import yaml

from structgan.config import TrainConfig
from structgan.data import RingsConfig, generate_rings, split_labels
from structgan.networks import ROLES
from structgan.trainer import build_networks, build_specs


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale training run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


TINY_RINGS = RingsConfig(num_classes=4, n_unlabeled=64, n_labeled=8, n_test=40, noise=0.02, seed=0)


@pytest.fixture
def tiny_split():
    return split_labels(generate_rings(TINY_RINGS), TINY_RINGS.n_labeled, seed=1)


@pytest.fixture
def tiny_train_config() -> TrainConfig:
    return TrainConfig(
        epochs=1,
        batch_size=16,
        pretrain_epochs=5,
        c_join_epoch=0,
        ramp_start=0,
        ramp_end=1,
        z_dim=2,
        num_classes=4,
    )


@pytest.fixture
def tiny_nets(tiny_split, tiny_train_config):
    specs = build_specs(tiny_split.x_dim, tiny_train_config, {role: (8, 8) for role in ROLES})
    return build_networks(specs, seed=2)


def write_tiny_config(directory: Path, **overrides) -> Path:
    raw = {
        "dataset": {"type": "rings", "rings": TINY_RINGS.model_dump()},
        "model": {"g_hidden": [8, 8], "i_hidden": [8, 8], "c_hidden": [8, 8], "d_hidden": [8, 8]},
        "train": {"epochs": 2, "batch_size": 16, "pretrain_epochs": 5, "ramp_start": 0, "ramp_end": 2},
        "eval": {"num_samples": 50, "eval_every": 1, "mp_iterations": 20, "golden_epochs": 2},
        "output_dir": str(directory / "run"),
        "seed": 0,
        "checkpoint_every": 1,
    }
    raw.update(overrides)
    path = directory / "config.yaml"
    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def make_config():
    return write_tiny_config
