"""Evaluate a task end to end and reduce per-scene outputs into a MetricReport."""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Iterable, Optional, Sequence

import numpy as np

from src.errors import DataError
from src.evaluation.baselines import ErdosRenyiSampler, UniformPredicateClassifier
from src.evaluation.metrics import gt_triplets, graph_accuracy, recall_with_breakdown
from src.evaluation.report import (
    GRAPH_ACC_CONSTRAINED,
    GRAPH_ACC_UNCONSTRAINED,
    MetricReport,
    mean_recall_key,
    recall_key,
    zero_shot_key,
)
from src.graph_pipeline import run_scene
from src.scene.types import Scene
from src.state import PipelineRuntime
from src.utils.config import TASKS

logger = logging.getLogger(__name__)

_PROGRESS_EVERY = 100


def check_runtime(runtime: PipelineRuntime) -> None:
    if runtime.sampler is None and runtime.ablations.graph_sampling and runtime.ggt_model is None:
        raise DataError("missing GGT checkpoint; run `train-ggt` first")
    if runtime.classifier is None and runtime.relation_model is None:
        raise DataError("missing relation checkpoint; run `train-rel` first")


def run_task(
    task: str,
    scenes: Sequence[Scene],
    runtime: PipelineRuntime,
    zs_types: Iterable[tuple[int, int, int]] = (),
) -> MetricReport:
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}; expected one of {TASKS}")
    check_runtime(runtime)
    config = runtime.eval_config
    zs_types = set(zs_types)

    predictions, ground_truth = [], []
    acc_unconstrained, acc_constrained, edge_counts = [], [], []
    for index, scene in enumerate(scenes):
        state = run_scene(scene, task, runtime)
        predictions.append(state["triplets"])
        ground_truth.append(gt_triplets(scene))

        graph = state["graph"]
        edge_counts.append(len(graph.edges))
        boxes = np.array([h.bbox for h in graph.nodes]).reshape(-1, 4)
        labels = [h.label for h in graph.nodes]
        kept = state["ranked"].pairs()
        for constrained, sink in ((False, acc_unconstrained), (True, acc_constrained)):
            value = graph_accuracy(boxes, labels, kept, scene, constrained, config.iou_threshold)
            if value is not None:
                sink.append(value)
        if (index + 1) % _PROGRESS_EVERY == 0:
            logger.debug("%s: %d/%d scenes", task, index + 1, len(scenes))

    metrics: dict[str, float] = {}
    per_predicate: dict[str, dict[str, float]] = {}
    for k in config.recall_ks:
        metrics[recall_key(k)], _ = recall_with_breakdown(
            predictions, ground_truth, k, "recall", threshold=config.iou_threshold
        )
        value, breakdown = recall_with_breakdown(
            predictions, ground_truth, k, "mean_recall", threshold=config.iou_threshold
        )
        metrics[mean_recall_key(k)] = value
        per_predicate[mean_recall_key(k)] = {str(p): r for p, r in breakdown.items()}
    for k in config.zero_shot_ks:
        metrics[zero_shot_key(k)], _ = recall_with_breakdown(
            predictions, ground_truth, k, "zero_shot", zs_types, config.iou_threshold
        )
    metrics[GRAPH_ACC_UNCONSTRAINED] = float(np.mean(acc_unconstrained)) if acc_unconstrained else 0.0
    metrics[GRAPH_ACC_CONSTRAINED] = float(np.mean(acc_constrained)) if acc_constrained else 0.0

    report = MetricReport(
        task=task,
        scene_count=len(scenes),
        top_k_edges=runtime.top_k,
        metrics=metrics,
        per_predicate_recall=per_predicate,
        mean_sampled_edges=float(np.mean(edge_counts)) if edge_counts else 0.0,
    )
    logger.info(
        "%s over %d scenes: %s",
        task,
        len(scenes),
        "  ".join(f"{k}={v:.4f}" for k, v in metrics.items()),
    )
    return report


def sampled_edge_counts(runtime: PipelineRuntime, task: str) -> dict[int, int]:
    """Edge count per scene of the graphs sampled so far for `task`."""
    return {scene_id: len(g.edges) for (t, scene_id), g in runtime.graph_cache.items() if t == task}


SWEEP_METRIC = "mR@100"


def sweep_columns(tasks: Sequence[str]) -> list[str]:
    columns = ["k"]
    for task in tasks:
        columns += [f"{task}_{SWEEP_METRIC}", f"{task}_{GRAPH_ACC_UNCONSTRAINED}", f"{task}_{GRAPH_ACC_CONSTRAINED}"]
    return columns


def run_sweep(
    ks: Sequence[Optional[int]],
    tasks: Sequence[str],
    scenes: Sequence[Scene],
    runtime: PipelineRuntime,
    zs_types: Iterable[tuple[int, int, int]] = (),
) -> list[dict]:
    """
    One row per K. Sampled graphs are cached on the runtime, so only ranking
    and classification repeat across K.
    """
    zs_types = list(zs_types)
    rows = []
    for k in ks:
        runtime.top_k = k
        row: dict = {"k": "all" if k is None else k}
        for task in tasks:
            report = run_task(task, scenes, runtime, zs_types)
            row[f"{task}_{SWEEP_METRIC}"] = report.metrics.get(SWEEP_METRIC, 0.0)
            row[f"{task}_{GRAPH_ACC_UNCONSTRAINED}"] = report.metrics[GRAPH_ACC_UNCONSTRAINED]
            row[f"{task}_{GRAPH_ACC_CONSTRAINED}"] = report.metrics[GRAPH_ACC_CONSTRAINED]
        rows.append(row)
        logger.info("sweep K=%s done", row["k"])
    return rows


def baseline_reports(
    task: str,
    scenes: Sequence[Scene],
    runtime: PipelineRuntime,
    zs_types: Iterable[tuple[int, int, int]] = (),
    seed: int = 0,
) -> dict[str, MetricReport]:
    """
    Uniform-random predicates over the trained sampler's edges, and the
    trained classifier over Erdos-Renyi graphs with matched edge counts.
    """
    zs_types = list(zs_types)
    counts = sampled_edge_counts(runtime, task)
    if len(counts) < len(scenes):
        run_task(task, scenes, runtime, zs_types)
        counts = sampled_edge_counts(runtime, task)

    uniform = replace(
        runtime,
        classifier=UniformPredicateClassifier(runtime.spec.num_predicates, seed),
        graph_cache=dict(runtime.graph_cache),
    )
    erdos_renyi = replace(runtime, sampler=ErdosRenyiSampler(counts, seed), graph_cache={})
    return {
        "uniform-predicate": run_task(task, scenes, uniform, zs_types),
        "erdos-renyi": run_task(task, scenes, erdos_renyi, zs_types),
    }
