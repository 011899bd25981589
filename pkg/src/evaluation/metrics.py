"""
Scene graph metrics: recall and mean recall at K with the graph
constraint, zero-shot recall, and unlabeled graph accuracy.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Literal, Optional, Sequence

import numpy as np

from src.evaluation.matching import iou, match_nodes
from src.scene.types import Box, Scene

RecallMode = Literal["recall", "mean_recall", "zero_shot"]


@dataclass(frozen=True)
class Triplet:
    """`subj`/`obj` identify entities within a scene; labels and boxes are what gets matched."""

    subj: int
    subj_label: int
    subj_box: Box
    predicate: int
    obj: int
    obj_label: int
    obj_box: Box
    score: float = 1.0

    @property
    def type(self) -> tuple[int, int, int]:
        return (self.subj_label, self.predicate, self.obj_label)


def gt_triplets(scene: Scene) -> list[Triplet]:
    entities = scene.gt_entities
    return [
        Triplet(
            subj=e.subj,
            subj_label=entities[e.subj].label,
            subj_box=entities[e.subj].bbox,
            predicate=e.predicate,
            obj=e.obj,
            obj_label=entities[e.obj].label,
            obj_box=entities[e.obj].bbox,
        )
        for e in scene.gt_edges
    ]


def sort_by_score(triplets: Iterable[Triplet]) -> list[Triplet]:
    """Score descending; equal scores keep their input order."""
    return sorted(triplets, key=lambda t: -t.score)


def apply_graph_constraint(triplets: Sequence[Triplet]) -> list[Triplet]:
    """Keep the highest-scoring predicate per ordered entity pair (ties: lower predicate id)."""
    best: dict[tuple[int, int], Triplet] = {}
    for t in triplets:
        key = (t.subj, t.obj)
        current = best.get(key)
        if current is None or (t.score, -t.predicate) > (current.score, -current.predicate):
            best[key] = t
    return [t for t in triplets if best[(t.subj, t.obj)] is t]


def _matches(pred: Triplet, gt: Triplet, threshold: float) -> bool:
    return (
        pred.predicate == gt.predicate
        and pred.subj_label == gt.subj_label
        and pred.obj_label == gt.obj_label
        and iou(pred.subj_box, gt.subj_box) >= threshold
        and iou(pred.obj_box, gt.obj_box) >= threshold
    )


def match_triplets(
    predictions: Sequence[Triplet], gt: Sequence[Triplet], k: Optional[int], threshold: float = 0.5
) -> list[bool]:
    """
    Greedy matching in score order over the top `k` predictions; each GT
    triplet is matched at most once. Returns a hit flag per GT triplet.
    """
    ranked = sort_by_score(predictions)
    if k is not None:
        ranked = ranked[:k]
    hits = [False] * len(gt)
    for pred in ranked:
        for index, target in enumerate(gt):
            if not hits[index] and _matches(pred, target, threshold):
                hits[index] = True
                break
    return hits


def recall_suite(
    predictions: Sequence[Sequence[Triplet]],
    ground_truth: Sequence[Sequence[Triplet]],
    k: Optional[int],
    mode: RecallMode = "recall",
    zs_types: Optional[Iterable[tuple[int, int, int]]] = None,
    threshold: float = 0.5,
) -> float:
    """Aggregate over scenes; scenes without (restricted) GT are skipped."""
    value, _ = recall_with_breakdown(predictions, ground_truth, k, mode, zs_types, threshold)
    return value


def recall_with_breakdown(
    predictions: Sequence[Sequence[Triplet]],
    ground_truth: Sequence[Sequence[Triplet]],
    k: Optional[int],
    mode: RecallMode = "recall",
    zs_types: Optional[Iterable[tuple[int, int, int]]] = None,
    threshold: float = 0.5,
) -> tuple[float, dict[int, float]]:
    """As `recall_suite`, also returning per-predicate recall for mean-recall mode."""
    zs = set(zs_types or ())
    scene_recalls: list[float] = []
    per_predicate: dict[int, list[float]] = defaultdict(list)
    for preds, gts in zip(predictions, ground_truth):
        if mode == "zero_shot":
            gts = [t for t in gts if t.type in zs]
        if not gts:
            continue
        hits = match_triplets(preds, gts, k, threshold)
        if mode == "mean_recall":
            totals: dict[int, list[int]] = defaultdict(lambda: [0, 0])
            for target, hit in zip(gts, hits):
                totals[target.predicate][0] += int(hit)
                totals[target.predicate][1] += 1
            for predicate, (hit_count, total) in totals.items():
                per_predicate[predicate].append(hit_count / total)
        else:
            scene_recalls.append(sum(hits) / len(hits))

    if mode == "mean_recall":
        breakdown = {p: float(np.mean(v)) for p, v in sorted(per_predicate.items())}
        return (float(np.mean(list(breakdown.values()))) if breakdown else 0.0), breakdown
    return (float(np.mean(scene_recalls)) if scene_recalls else 0.0), {}


def graph_accuracy(
    pred_nodes_boxes: np.ndarray,
    pred_nodes_labels: Sequence[int],
    pred_edges: Iterable[tuple[int, int]],
    gt: Scene,
    constrained: bool,
    threshold: float = 0.5,
) -> Optional[float]:
    """
    Fraction of GT edges (as ordered node pairs) whose matched endpoints are
    joined in the predicted graph. None when the scene has no GT edges.
    """
    gt_pairs = sorted({(e.subj, e.obj) for e in gt.gt_edges})
    if not gt_pairs:
        return None
    gt_boxes = np.array([e.bbox for e in gt.gt_entities])
    if constrained:
        matched = match_nodes(
            pred_nodes_boxes, gt_boxes, threshold, list(pred_nodes_labels), [e.label for e in gt.gt_entities]
        )
    else:
        matched = match_nodes(pred_nodes_boxes, gt_boxes, threshold)
    gt_to_pred = {g: p for p, g in matched.items()}
    edges = set(pred_edges)
    recovered = sum(
        1
        for a, b in gt_pairs
        if a in gt_to_pred and b in gt_to_pred and (gt_to_pred[a], gt_to_pred[b]) in edges
    )
    return recovered / len(gt_pairs)
