from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import (
    ComponentSeeds,
    ConfigError,
    RunConfig,
    component_seeds,
    config_hash,
    derive_seed,
    get_settings,
    hidden_for,
    load_run_config,
)
from .data import (
    DatasetError,
    DatasetSplit,
    export_rings_csv,
    generate_rings,
    make_idx_dataset,
    make_rings_dataset,
    split_labels,
)
from .evaluation import (
    METRIC_FIELDS,
    EvaluationError,
    GoldenClassifier,
    MetricsRecord,
    evaluate,
    golden_spec,
    interpolate,
    style_transfer,
    train_golden_classifier,
)
from .export import MetricsWriter, read_csv, tile_images, write_pgm, write_samples_csv
from .games import GameLossReport
from .gradcheck import format_reports, run_suite
from .networks import ROLES, NetworkError, NetworkSpec, generator_forward, one_hot
from .trainer import (
    PriorSpec,
    SGANNetworks,
    TrainingDivergedError,
    TrainResult,
    build_networks,
    build_specs,
    diverges_as,
    train,
)

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
ABLATIONS: Dict[str, Dict[str, bool]] = {
    "full": {},
    "no_rz": {"use_rz": False},
    "no_ry_rz": {"use_ry": False, "use_rz": False},
}


class UsageError(ValueError):
    """Raised for command arguments that are well-formed but unusable."""


@dataclass
class Experiment:
    """Everything derived from a RunConfig before any network is trained."""

    config: RunConfig
    seeds: ComponentSeeds
    dataset: DatasetSplit
    specs: Dict[str, NetworkSpec]
    priors: PriorSpec

    @property
    def image_shape(self) -> Optional[Tuple[int, int]]:
        return self.dataset.source.image_shape if self.dataset.source is not None else None

    @property
    def golden_spec(self) -> NetworkSpec:
        return golden_spec(self.dataset.x_dim, self.dataset.num_classes, hidden_for(self.config.model, "C"))


@dataclass
class RunOutcome:
    result: TrainResult
    golden: GoldenClassifier
    final: MetricsRecord


def prepare(config: RunConfig) -> Experiment:
    seeds = component_seeds(config)
    section = config.dataset
    if section.type == "idx":
        idx = section.idx
        full = make_idx_dataset(
            idx.train_images,
            idx.train_labels,
            idx.test_images,
            idx.test_labels,
            idx.num_classes,
            max_train=idx.max_train,
            max_test=idx.max_test,
        )
        dataset = split_labels(full, section.n_labeled, seeds.data)
    else:
        dataset = make_rings_dataset(section.rings, split_seed=seeds.data)
    hidden = {role: hidden_for(config.model, role) for role in ROLES}
    specs = build_specs(
        dataset.x_dim,
        config.train,
        hidden,
        g_head="sigmoid" if section.type == "idx" else "linear",
        leaky_slope=config.model.leaky_slope,
    )
    return Experiment(
        config=config,
        seeds=seeds,
        dataset=dataset,
        specs=specs,
        priors=PriorSpec.from_config(config.train),
    )


def run_training(config: RunConfig, progress: bool = False) -> RunOutcome:
    """Golden classifier, then the full training loop, writing metrics.csv rows and checkpoints under output_dir."""
    exp = prepare(config)
    out = Path(config.output_dir)
    digest = config_hash(config)
    logger.info(
        "training on %s: %d unlabeled, %d labeled, %d test rows",
        config.dataset.type,
        exp.dataset.x_unlabeled.shape[0],
        exp.dataset.x_labeled.shape[0],
        exp.dataset.test_x.shape[0],
    )
    golden = train_golden_classifier(
        exp.dataset.source,
        seed=derive_seed(exp.seeds.eval, 1),
        hidden=hidden_for(config.model, "C"),
        epochs=config.eval.golden_epochs,
        lr=config.eval.golden_lr,
        batch_size=config.eval.golden_batch_size,
    )
    nets = build_networks(exp.specs, exp.seeds.init)
    writer = MetricsWriter(out / "metrics.csv")
    epochs = config.train.epochs

    def on_epoch(epoch: int, current: SGANNetworks, report: GameLossReport) -> MetricsRecord:
        if (epoch + 1) % config.eval.eval_every == 0 or epoch == epochs - 1:
            with diverges_as("evaluation"):
                record = evaluate(current, golden, exp.dataset, exp.priors, config.eval, exp.seeds.eval, report=report)
            logger.info("epoch %d metrics: %s", epoch, record.metrics())
        else:
            record = MetricsRecord.from_report(report)
        writer.append(record)
        if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_{epoch + 1:04d}.ckpt", digest, current, golden)
        return record

    result = train(nets, exp.dataset, config.train, exp.seeds.train, on_epoch=on_epoch, progress=progress)
    save_checkpoint(out / "final.ckpt", digest, result.nets, golden)
    if result.metrics:
        final = result.metrics[-1]
    else:
        final = evaluate(result.nets, golden, exp.dataset, exp.priors, config.eval, exp.seeds.eval)
    return RunOutcome(result=result, golden=golden, final=final)


def _with_overrides(config: RunConfig, seed: Optional[int] = None, out: Optional[str] = None) -> RunConfig:
    update = {}
    if seed is not None:
        update["seed"] = seed
    if out is not None:
        update["output_dir"] = Path(out)
    return config.model_copy(update=update) if update else config


def _restore(args: argparse.Namespace) -> Tuple[Experiment, SGANNetworks, GoldenClassifier]:
    config = load_run_config(args.config)
    checkpoint = load_checkpoint(args.checkpoint, None if getattr(args, "force", False) else config_hash(config))
    exp = prepare(config)
    return exp, checkpoint.networks(exp.specs), checkpoint.golden(exp.golden_spec)


def _sample_rng(exp: Experiment, seed: Optional[int], key: int) -> np.random.Generator:
    return np.random.default_rng(seed if seed is not None else derive_seed(exp.seeds.eval, key))


def _check_class(label: int, classes: int) -> int:
    if not 0 <= label < classes:
        raise UsageError(f"class {label} is out of range for {classes} classes")
    return label


def _write_grid(exp: Experiment, out: Path, grid: np.ndarray, conditions: np.ndarray, extra=None) -> Path:
    """CSV rows for vector data, one PGM grid for image data."""
    if exp.image_shape is None:
        return write_samples_csv(out, grid.reshape(-1, grid.shape[-1]), conditions.reshape(-1).tolist(), extra)
    return write_pgm(out, tile_images(grid, exp.image_shape))


def cmd_train(args: argparse.Namespace) -> int:
    config = _with_overrides(load_run_config(args.config), args.seed, args.out)
    outcome = run_training(config, progress=get_settings().progress)
    print(outcome.final.to_json())
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    exp, nets, golden = _restore(args)
    record = evaluate(
        nets,
        golden,
        exp.dataset,
        exp.priors,
        exp.config.eval,
        exp.seeds.eval,
        epoch=max(exp.config.train.epochs - 1, 0),
    )
    print(record.to_json())
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    if (args.label is None) == (not args.all):
        raise UsageError("pass exactly one of --class or --all")
    exp, nets, _ = _restore(args)
    classes = exp.priors.num_classes
    labels = list(range(classes)) if args.all else [_check_class(args.label, classes)]
    rng = _sample_rng(exp, args.seed, 2)
    z = exp.priors.sample_z(rng, args.num)
    rows = [
        generator_forward(nets.G, one_hot(np.full(args.num, label), classes), z).data for label in labels
    ]
    grid = np.stack(rows)
    conditions = np.repeat(np.asarray(labels), args.num).reshape(len(labels), args.num)
    path = _write_grid(exp, Path(args.out), grid, conditions)
    logger.info("wrote %d samples to %s", grid.shape[0] * grid.shape[1], path)
    return EXIT_OK


def _read_sources(spec: str, x_dim: int) -> np.ndarray:
    path = Path(spec)
    if path.exists():
        frame = read_csv(path)
        columns = [f"x{i}" for i in range(x_dim)]
        missing = [c for c in columns if c not in frame.columns]
        if missing:
            raise UsageError(f"{path} is missing columns {missing}")
        return frame[columns].to_numpy(dtype=float)
    try:
        row = np.array([float(v) for v in spec.split(",")])
    except ValueError as exc:
        raise UsageError(f"--input must be a CSV file or comma-separated floats, got {spec!r}") from exc
    if row.size != x_dim:
        raise UsageError(f"--input has {row.size} values, expected {x_dim}")
    return row.reshape(1, -1)


def _parse_classes(spec: str, classes: int) -> List[int]:
    try:
        labels = [int(v) for v in spec.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--classes must be comma-separated integers, got {spec!r}") from exc
    if not labels:
        raise UsageError("--classes is empty")
    return [_check_class(label, classes) for label in labels]


def cmd_transfer(args: argparse.Namespace) -> int:
    exp, nets, _ = _restore(args)
    sources = _read_sources(args.input, exp.dataset.x_dim)
    targets = _parse_classes(args.classes, exp.priors.num_classes)
    grid = style_transfer(nets.G, nets.I, sources, targets)
    conditions = np.tile(np.asarray(targets), (sources.shape[0], 1))
    source_ids = np.repeat(np.arange(sources.shape[0]), len(targets))
    path = _write_grid(exp, Path(args.out), grid, conditions, {"source": source_ids.tolist()})
    logger.info("wrote %d transferred samples to %s", conditions.size, path)
    return EXIT_OK


def cmd_interpolate(args: argparse.Namespace) -> int:
    if args.steps < 2:
        raise UsageError(f"--steps must be at least 2, got {args.steps}")
    exp, nets, _ = _restore(args)
    label = _check_class(args.label, exp.priors.num_classes)
    z_start, z_end = exp.priors.sample_z(_sample_rng(exp, args.seed, 3), 2)
    path_x = interpolate(nets.G, label, z_start, z_end, args.steps)
    conditions = np.full((1, args.steps), label)
    out = _write_grid(exp, Path(args.out), path_x[np.newaxis], conditions, {"step": list(range(args.steps))})
    logger.info("wrote %d interpolation steps to %s", args.steps, out)
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    reports = run_suite(seeds=range(args.seeds), h=args.h, tol=args.tol)
    print(format_reports(reports))
    failed = [r.name for r in reports if not r.passed]
    if failed:
        logger.error("gradient check failed for %s", ", ".join(failed))
        return EXIT_FAILED
    return EXIT_OK


def cmd_ablation(args: argparse.Namespace) -> int:
    config = _with_overrides(load_run_config(args.config), args.seed, args.out)
    summary = {}
    for variant, switches in ABLATIONS.items():
        variant_config = config.model_copy(
            update={
                "train": config.train.model_copy(update=switches),
                "output_dir": Path(config.output_dir) / variant,
            }
        )
        logger.info("ablation variant %s", variant)
        final = run_training(variant_config).final
        summary[variant] = final.metrics()
    print(json.dumps(summary, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_repeat(args: argparse.Namespace) -> int:
    if args.runs < 1:
        raise UsageError("--runs must be at least 1")
    config = _with_overrides(load_run_config(args.config), args.seed, args.out)
    runs = []
    for index in range(args.runs):
        run_config = config.model_copy(
            update={"seed": config.seed + index, "output_dir": Path(config.output_dir) / f"run_{index}"}
        )
        logger.info("repeat run %d/%d (seed %d)", index + 1, args.runs, run_config.seed)
        runs.append(run_training(run_config).final.metrics())
    frame = pd.DataFrame(runs, columns=list(METRIC_FIELDS))
    summary = {
        "runs": runs,
        "mean": {name: float(frame[name].mean()) for name in METRIC_FIELDS},
        "std": {name: float(frame[name].std(ddof=0)) for name in METRIC_FIELDS},
    }
    path = Path(config.output_dir) / "summary.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, sort_keys=True, indent=2), encoding="utf-8")
    print(json.dumps(summary["mean"], sort_keys=True))
    return EXIT_OK


def cmd_export_data(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    if config.dataset.type != "rings":
        raise UsageError("export-data only supports the rings dataset")
    export_rings_csv(generate_rings(config.dataset.rings), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="structgan", description="Structured GAN training and evaluation")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_train = sub.add_parser("train", help="Train all five networks and write metrics.csv plus checkpoints")
    p_train.add_argument("config", help="Run config (YAML)")
    p_train.add_argument("--seed", type=int, default=None, help="Override the master seed")
    p_train.add_argument("--out", default=None, help="Override output_dir")
    p_train.set_defaults(handler=cmd_train)

    def restoring(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("checkpoint", help="Checkpoint file")
        p.add_argument("config", help="Run config the checkpoint was trained with")
        p.add_argument("--force", action="store_true", help="Ignore a config hash mismatch")
        return p

    p_eval = restoring("eval", "Recompute evaluation metrics and print them as JSON")
    p_eval.set_defaults(handler=cmd_eval)

    p_gen = restoring("generate", "Sample from G for one class or for every class")
    p_gen.add_argument("--class", dest="label", type=int, default=None, help="Condition class")
    p_gen.add_argument("--all", action="store_true", help="One row per class, shared z per column")
    p_gen.add_argument("--num", type=int, default=8, help="Samples per class")
    p_gen.add_argument("--seed", type=int, default=None, help="Sampling seed")
    p_gen.add_argument("--out", required=True, help="Output CSV (vector data) or PGM (images)")
    p_gen.set_defaults(handler=cmd_generate)

    p_tr = restoring("transfer", "Infer z from inputs and regenerate them under other classes")
    p_tr.add_argument("--input", required=True, help="CSV file with x0.. columns, or one comma-separated row")
    p_tr.add_argument("--classes", required=True, help="Comma-separated target classes")
    p_tr.add_argument("--out", required=True, help="Output CSV or PGM")
    p_tr.set_defaults(handler=cmd_transfer)

    p_int = restoring("interpolate", "Generate along a straight line between two z draws")
    p_int.add_argument("--class", dest="label", type=int, required=True, help="Condition class")
    p_int.add_argument("--steps", type=int, default=8, help="Number of points, endpoints included")
    p_int.add_argument("--seed", type=int, default=None, help="Seed for the endpoint draws")
    p_int.add_argument("--out", required=True, help="Output CSV or PGM")
    p_int.set_defaults(handler=cmd_interpolate)

    p_gc = sub.add_parser("gradcheck", help="Check every op and network gradient against finite differences")
    p_gc.add_argument("--seeds", type=int, default=1, help="Random inputs per case")
    p_gc.add_argument("--h", type=float, default=1e-4, help="Finite-difference step")
    p_gc.add_argument("--tol", type=float, default=1e-3, help="Maximum relative error")
    p_gc.set_defaults(handler=cmd_gradcheck)

    p_ab = sub.add_parser("ablation", help="Train full / no-R_z / no-R_y-R_z variants on one seed")
    p_ab.add_argument("config", help="Run config (YAML)")
    p_ab.add_argument("--seed", type=int, default=None, help="Override the master seed")
    p_ab.add_argument("--out", default=None, help="Override output_dir")
    p_ab.set_defaults(handler=cmd_ablation)

    p_rep = sub.add_parser("repeat", help="Train several runs with re-sampled labels and summarize them")
    p_rep.add_argument("config", help="Run config (YAML)")
    p_rep.add_argument("--runs", type=int, default=5, help="Number of runs")
    p_rep.add_argument("--seed", type=int, default=None, help="Override the first master seed")
    p_rep.add_argument("--out", default=None, help="Override output_dir")
    p_rep.set_defaults(handler=cmd_repeat)

    p_exp = sub.add_parser("export-data", help="Write the rings test split as CSV (x0,x1,y,s)")
    p_exp.add_argument("config", help="Run config (YAML)")
    p_exp.add_argument("--out", required=True, help="Output CSV")
    p_exp.set_defaults(handler=cmd_export_data)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = get_settings()
        logging.basicConfig(
            level=settings.log_level.upper(),
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        return args.handler(args)
    except (ConfigError, CheckpointError, DatasetError, EvaluationError, NetworkError, UsageError) as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        logger.error("%s", exc)
        return EXIT_DIVERGED
