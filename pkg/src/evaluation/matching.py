"""Box overlap and greedy one-to-one node matching."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np


def iou(box_a, box_b) -> float:
    ax1, ay1, ax2, ay2 = box_a
    bx1, by1, bx2, by2 = box_b
    inter_w = min(ax2, bx2) - max(ax1, bx1)
    inter_h = min(ay2, by2) - max(ay1, by1)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return float(inter / union) if union > 0 else 0.0


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    inter_w = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    inter_h = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(inter_w, 0.0, None) * np.clip(inter_h, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def match_nodes(
    pred_boxes: np.ndarray,
    gt_boxes: np.ndarray,
    threshold: float = 0.5,
    pred_labels: Optional[Sequence[int]] = None,
    gt_labels: Optional[Sequence[int]] = None,
) -> dict[int, int]:
    """
    Greedy one-to-one matching, highest IoU first (ties by predicted then GT
    index). With labels given, only label-equal pairs may match.
    Returns {predicted index: GT index}.
    """
    overlaps = iou_matrix(pred_boxes, gt_boxes)
    if overlaps.size == 0:
        return {}
    allowed = overlaps >= threshold
    if pred_labels is not None and gt_labels is not None:
        allowed &= np.asarray(pred_labels)[:, None] == np.asarray(gt_labels)[None, :]
    candidates = sorted(zip(*np.nonzero(allowed)), key=lambda pg: (-overlaps[pg], pg[0], pg[1]))
    matched: dict[int, int] = {}
    used_gt: set[int] = set()
    for p, g in candidates:
        if p in matched or g in used_gt:
            continue
        matched[int(p)] = int(g)
        used_gt.add(int(g))
    return matched
