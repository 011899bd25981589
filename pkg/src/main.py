#!/usr/bin/env python3
"""
Command-line entry point.

    isggt synth       synthesize the train/test scenes
    isggt train-ggt   train the graph generative transformer
    isggt train-rel   train the predicate classifier
    isggt eval        evaluate one task (or every configured task)
    isggt sweep-topk  evaluate over a grid of top-K edge budgets
    isggt report      print saved reports, optionally next to random baselines
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from pathlib import Path
from typing import Optional, Sequence

from src.autodiff.checkpoint import load_checkpoint, save_checkpoint
from src.errors import ConfigError, DataError, IsggtError, exit_code_for
from src.evaluation.report import MetricReport, render_table
from src.evaluation.runner import baseline_reports, run_sweep, run_task, sweep_columns
from src.models.ggt import GraphGenerativeTransformer, load_model
from src.models.relation import RelationPredictor, load_relation_model
from src.scene.dataset import TRAIN_FILE, Dataset, build_dataset, dataset_stats, read_dataset, write_dataset
from src.state import PipelineRuntime
from src.training.ggt_trainer import train_ggt
from src.training.relation_trainer import train_relation
from src.utils.config import (
    DEFAULT_LOG_LEVEL,
    TASKS,
    ExperimentConfig,
    config_hash,
    file_hash,
    resume_hash,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.ckpt"
LOSS_FILE = "loss.csv"
MANIFEST_FILE = "manifest.json"


class RunPaths:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.data = self.root / "data"
        self.ggt = self.root / "ggt"
        self.rel = self.root / "rel"
        self.eval = self.root / "eval"
        self.sweep = self.root / "sweep"
        self.config = self.root / "config.json"


def parse_k(value: str) -> Optional[int]:
    if value.lower() == "all":
        return None
    try:
        k = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"K must be an integer or 'all', got {value!r}") from None
    if k < 0:
        raise argparse.ArgumentTypeError(f"K must be >= 0, got {k}")
    return k


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    return config.with_overrides(seed=args.seed, output_dir=args.out, top_k=args.k)


def load_split(paths: RunPaths, config: ExperimentConfig, split: str) -> Dataset:
    dataset = read_dataset(paths.data, splits=(split,))
    if dataset.spec != config.world:
        raise ConfigError(f"{paths.data} was synthesized from a different world spec; re-run `synth --force`")
    return dataset


# ============================================================
# COMMANDS
# ============================================================


def cmd_synth(config: ExperimentConfig, paths: RunPaths, force: bool) -> dict:
    if paths.data.exists() and any(paths.data.iterdir()):
        if not force:
            raise ConfigError(f"{paths.data} already exists; pass --force to overwrite")
        shutil.rmtree(paths.data)
    dataset = build_dataset(
        config.world,
        config.dataset.n_train,
        config.dataset.n_test,
        config.dataset.zero_shot_fraction,
        config.dataset.stored_hypotheses,
    )
    write_dataset(dataset, paths.data)
    config.dump(paths.config)
    stats = {"train": dataset_stats(dataset, "train"), "test": dataset_stats(dataset, "test")}
    write_json(paths.data / "stats.json", stats)
    print(json.dumps(stats, indent=2, sort_keys=True))
    return stats


def _prepare_training_dir(directory: Path, force: bool, resume: bool) -> None:
    checkpoint = directory / CHECKPOINT_FILE
    if checkpoint.exists() and not (force or resume):
        raise ConfigError(f"{checkpoint} already exists; pass --force to retrain or --resume to continue")
    if force and not resume and directory.exists():
        shutil.rmtree(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not resume:
        (directory / LOSS_FILE).unlink(missing_ok=True)


def _resume_state(directory: Path, namespace: str, expected_hash: str, dataset_hash: str):
    checkpoint = load_checkpoint(directory / CHECKPOINT_FILE)
    meta = checkpoint.metadata
    if meta.get("resume_hash") != expected_hash:
        raise ConfigError(f"cannot resume {directory}: configuration differs from the interrupted run")
    if meta.get("dataset_hash") != dataset_hash:
        raise ConfigError(f"cannot resume {directory}: training data differs from the interrupted run")
    return checkpoint.namespace(namespace), checkpoint.optimizer, int(meta.get("epochs_completed", 0))


def _save_training(directory: Path, namespace: str, result, metadata: dict, config: ExperimentConfig) -> None:
    tensors = {f"{namespace}/{name}": array for name, array in result.model.state_arrays().items()}
    metadata = {**metadata, "epochs_completed": result.epochs_completed}
    save_checkpoint(directory / CHECKPOINT_FILE, tensors, result.optimizer, metadata)
    write_json(
        directory / MANIFEST_FILE,
        {
            **metadata,
            "config": config.model_dump(mode="json"),
            "checkpoint_hash": file_hash(directory / CHECKPOINT_FILE),
        },
    )


def load_ggt(paths: RunPaths, config: ExperimentConfig) -> GraphGenerativeTransformer:
    checkpoint = load_checkpoint(paths.ggt / CHECKPOINT_FILE)
    return load_model(
        checkpoint.namespace("ggt"), config.world.feature_dim, config.world.num_entity_classes, config.ggt
    )


def load_relation(paths: RunPaths, config: ExperimentConfig) -> RelationPredictor:
    checkpoint = load_checkpoint(paths.rel / CHECKPOINT_FILE)
    return load_relation_model(
        checkpoint.namespace("rel"),
        config.world.feature_dim,
        config.world.num_entity_classes,
        config.world.num_predicates,
        config.relation,
        config.ablations,
    )


def cmd_train_ggt(config: ExperimentConfig, paths: RunPaths, force: bool, resume: bool):
    dataset = load_split(paths, config, "train")
    dataset_hash = file_hash(paths.data / TRAIN_FILE)
    expected = resume_hash(config, "ggt")
    _prepare_training_dir(paths.ggt, force, resume)

    model, optimizer, start_epoch = None, None, 0
    if resume and (paths.ggt / CHECKPOINT_FILE).exists():
        arrays, optimizer, start_epoch = _resume_state(paths.ggt, "ggt", expected, dataset_hash)
        model = load_model(arrays, config.world.feature_dim, config.world.num_entity_classes, config.ggt)
        logger.info("resuming GGT training after epoch %d", start_epoch)

    result = train_ggt(
        dataset.train,
        config.world,
        config.ggt,
        config.seeds.ggt,
        model=model,
        optimizer_state=optimizer,
        start_epoch=start_epoch,
        loss_log=paths.ggt / LOSS_FILE,
    )
    metadata = {
        "config_hash": config_hash(config),
        "resume_hash": expected,
        "dataset_hash": dataset_hash,
        "seed": config.seeds.ggt,
    }
    _save_training(paths.ggt, "ggt", result, metadata, config)
    return result


def cmd_train_rel(config: ExperimentConfig, paths: RunPaths, force: bool, resume: bool):
    dataset = load_split(paths, config, "train")
    dataset_hash = file_hash(paths.data / TRAIN_FILE)
    expected = resume_hash(config, "relation")
    _prepare_training_dir(paths.rel, force, resume)

    ggt_model = None
    if config.relation.training_edges == "sampled" and config.ablations.graph_sampling:
        ggt_model = load_ggt(paths, config)

    model, optimizer, start_epoch = None, None, 0
    if resume and (paths.rel / CHECKPOINT_FILE).exists():
        arrays, optimizer, start_epoch = _resume_state(paths.rel, "rel", expected, dataset_hash)
        model = load_relation_model(
            arrays,
            config.world.feature_dim,
            config.world.num_entity_classes,
            config.world.num_predicates,
            config.relation,
            config.ablations,
        )
        logger.info("resuming relation training after epoch %d", start_epoch)

    result = train_relation(
        dataset.train,
        config.world,
        config.relation,
        config.ablations,
        config.seeds.relation,
        ggt_model=ggt_model,
        ggt_config=config.ggt,
        top_k=config.evaluation.top_k_edges,
        model=model,
        optimizer_state=optimizer,
        start_epoch=start_epoch,
        loss_log=paths.rel / LOSS_FILE,
    )
    metadata = {
        "config_hash": config_hash(config),
        "resume_hash": expected,
        "dataset_hash": dataset_hash,
        "seed": config.seeds.relation,
    }
    _save_training(paths.rel, "rel", result, metadata, config)
    return result


def build_runtime(config: ExperimentConfig, paths: RunPaths) -> PipelineRuntime:
    ggt_model = load_ggt(paths, config) if config.ablations.graph_sampling else None
    return PipelineRuntime(
        spec=config.world,
        ggt_config=config.ggt,
        eval_config=config.evaluation,
        ablations=config.ablations,
        ggt_model=ggt_model,
        relation_model=load_relation(paths, config),
        top_k=config.evaluation.top_k_edges,
    )


def cmd_eval(config: ExperimentConfig, paths: RunPaths, task: Optional[str]) -> list[MetricReport]:
    dataset = load_split(paths, config, "test")
    runtime = build_runtime(config, paths)
    tasks = [task] if task else list(config.evaluation.tasks)
    reports = []
    for name in tasks:
        report = run_task(name, dataset.test, runtime, dataset.zs_triplet_types)
        report.save(paths.eval / f"{name}.json")
        reports.append(report)
    print(render_table(reports), end="")
    return reports


def cmd_sweep_topk(config: ExperimentConfig, paths: RunPaths, ks: Sequence[Optional[int]]) -> list[dict]:
    dataset = load_split(paths, config, "test")
    runtime = build_runtime(config, paths)
    tasks = list(config.evaluation.tasks)
    rows = run_sweep(ks, tasks, dataset.test, runtime, dataset.zs_triplet_types)
    paths.sweep.mkdir(parents=True, exist_ok=True)
    with open(paths.sweep / "topk.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=sweep_columns(tasks), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return rows


def cmd_report(config: ExperimentConfig, paths: RunPaths, target: Optional[Path], baselines: bool) -> str:
    target = Path(target) if target else paths.eval
    files = sorted(target.glob("*.json")) if target.is_dir() else [target]
    if not files:
        raise DataError(f"no reports found under {target}")
    reports = [MetricReport.load(f) for f in files]
    extra: dict[str, MetricReport] = {}
    if baselines:
        dataset = load_split(paths, config, "test")
        runtime = build_runtime(config, paths)
        for report in reports:
            for name, baseline in baseline_reports(
                report.task, dataset.test, runtime, dataset.zs_triplet_types, config.seeds.evaluation
            ).items():
                extra[f"{report.task} ({name})"] = baseline
    text = render_table(reports, extra)
    print(text, end="")
    return text


# ============================================================
# ARGUMENTS
# ============================================================


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="base seed; overrides every seed in the config")
    common.add_argument("--out", help="output directory")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--k", type=parse_k, action="append", help="top-K edges (repeatable; 'all' keeps every edge)")
    common.add_argument("--log-level", default=DEFAULT_LOG_LEVEL, help="logging level")

    parser = argparse.ArgumentParser(prog="isggt", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="synthesize the dataset")
    for name in ("train-ggt", "train-rel"):
        p = sub.add_parser(name, parents=[common], help=f"{name.split('-')[1]} model training")
        p.add_argument("--resume", action="store_true", help="continue from the saved checkpoint")
    p = sub.add_parser("eval", parents=[common], help="evaluate a task")
    p.add_argument("--task", choices=TASKS, help="task to evaluate (default: every configured task)")
    sub.add_parser("sweep-topk", parents=[common], help="evaluate over a top-K grid")
    p = sub.add_parser("report", parents=[common], help="print saved metric reports")
    p.add_argument("path", nargs="?", type=Path, help="report file or directory (default: <out>/eval)")
    p.add_argument("--baselines", action="store_true", help="also compute the random baselines")
    return parser


def dispatch(args: argparse.Namespace):
    config = load_config(args)
    paths = RunPaths(Path(config.output_dir))
    if args.command == "synth":
        return cmd_synth(config, paths, args.force)
    if args.command == "train-ggt":
        return cmd_train_ggt(config, paths, args.force, args.resume)
    if args.command == "train-rel":
        return cmd_train_rel(config, paths, args.force, args.resume)
    if args.command == "eval":
        return cmd_eval(config, paths, args.task)
    if args.command == "sweep-topk":
        ks = args.k if args.k else config.evaluation.sweep_ks
        return cmd_sweep_topk(config, paths, ks)
    return cmd_report(config, paths, args.path, args.baselines)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        dispatch(args)
    except IsggtError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exit_code_for(exc)
    except Exception:
        logger.exception("unexpected failure")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
