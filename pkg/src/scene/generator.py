"""Procedural scene generation and the simulated detector."""

from __future__ import annotations

from typing import Iterable, Optional

import numpy as np

from src.errors import ConfigError
from src.scene.types import EntityHypothesis, GTEdge, GTEntity, Scene
from src.scene.world import World, get_world, spatial_bucket
from src.utils.config import TASKS, WorldSpec

TripletType = tuple[int, int, int]

_SCENE_STREAM = 0
_DETECTOR_STREAM = 1
_MODE_CODES = {"predcls": 0, "sgcls": 1, "sgdet": 2}
_MIN_CONFIDENCE = 0.01
_MIN_BOX_SIDE = 1e-3


def generate_scene(
    spec: WorldSpec,
    scene_seed: int,
    excluded_types: Optional[Iterable[TripletType]] = None,
) -> Scene:
    """
    Draw one scene. Predicates of `excluded_types` are removed from the rule
    row before sampling; an edge whose row empties is dropped.
    """
    world = get_world(spec)
    excluded = set(excluded_types or ())
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, scene_seed, _SCENE_STREAM]))

    n = int(rng.integers(spec.min_entities, spec.max_entities + 1))
    labels = rng.integers(0, world.num_classes, size=n)
    boxes = world.sample_boxes(rng, labels)
    entities = [
        GTEntity(
            label=int(labels[i]),
            bbox=tuple(float(v) for v in boxes[i]),
            feature=(world.prototypes[labels[i]] + world.positional_component(boxes[i])).tolist(),
        )
        for i in range(n)
    ]

    edges = []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            # one uniform draw per ordered pair keeps the stream aligned across exclusions
            draw = rng.random()
            if draw >= world.affinity[labels[i], labels[j]]:
                continue
            row = world.rules[labels[i], labels[j], spatial_bucket(boxes[i], boxes[j])].copy()
            if excluded:
                for p in range(world.num_predicates):
                    if (int(labels[i]), p, int(labels[j])) in excluded:
                        row[p] = 0.0
            total = row.sum()
            pick = rng.random()
            if total <= 0.0:
                continue
            predicate = int(np.searchsorted(np.cumsum(row / total), pick, side="right"))
            edges.append(GTEdge(subj=i, predicate=min(predicate, world.num_predicates - 1), obj=j))

    return Scene(scene_id=scene_seed, gt_entities=entities, gt_edges=edges)


def _detector_confidence(rng: np.random.Generator, correct: bool, noise: float) -> float:
    base = 1.0 if correct else 0.5
    return float(np.clip(base - abs(rng.normal(0.0, noise)), _MIN_CONFIDENCE, 1.0)) if noise else base


def _flip(rng: np.random.Generator, label: int, num_classes: int, prob: float) -> int:
    draw = rng.random()
    other = int(rng.integers(0, max(num_classes - 1, 1)))
    if num_classes < 2 or draw >= prob:
        return label
    return other if other < label else other + 1


def _jitter(rng: np.random.Generator, box: np.ndarray, scale: float) -> np.ndarray:
    w, h = box[2] - box[0], box[3] - box[1]
    offsets = rng.normal(0.0, 1.0, size=4) * scale * np.array([w, h, w, h])
    moved = np.clip(box + offsets, 0.0, 1.0)
    x1, x2 = sorted((moved[0], moved[2]))
    y1, y2 = sorted((moved[1], moved[3]))
    if x2 - x1 < _MIN_BOX_SIDE or y2 - y1 < _MIN_BOX_SIDE:
        return box.copy()
    return np.array([x1, y1, x2, y2])


def _feature(world: World, rng: np.random.Generator, label: int, box: np.ndarray) -> list[float]:
    noise = rng.normal(0.0, 1.0, size=world.spec.feature_dim) * world.spec.feature_noise
    return (world.prototypes[label] + noise + world.positional_component(box)).tolist()


def simulate_detector(scene: Scene, spec: WorldSpec, mode: str) -> list[EntityHypothesis]:
    """
    Stand-in for concept grounding.

    predcls: GT boxes and labels, confidence 1.0.
    sgcls:   GT boxes, labels flipped with `label_flip_prob`, noisy confidences.
    sgdet:   jittered boxes, label noise, misses and false positives.
    """
    if mode not in TASKS:
        raise ConfigError(f"unknown detector mode {mode!r}; expected one of {TASKS}")
    world = get_world(spec)
    noise = spec.detector_noise
    rng = np.random.default_rng(
        np.random.SeedSequence([spec.seed, scene.scene_id, _DETECTOR_STREAM, _MODE_CODES[mode]])
    )

    hypotheses = []
    for index, entity in enumerate(scene.gt_entities):
        box = np.asarray(entity.bbox, dtype=np.float64)
        label = entity.label
        confidence = 1.0
        if mode != "predcls":
            missed = rng.random() < noise.miss_rate
            if mode == "sgdet":
                box = _jitter(rng, box, noise.bbox_jitter_scale)
            label = _flip(rng, entity.label, world.num_classes, noise.label_flip_prob)
            confidence = _detector_confidence(rng, label == entity.label, noise.confidence_noise)
            if mode == "sgdet" and missed:
                continue
        hypotheses.append(
            EntityHypothesis(
                label=label,
                bbox=tuple(float(v) for v in box),
                confidence=confidence,
                feature=_feature(world, rng, label, box),
                gt_index=index,
            )
        )

    if mode == "sgdet":
        count = int(rng.binomial(len(scene.gt_entities), noise.false_positive_rate))
        labels = rng.integers(0, world.num_classes, size=count)
        boxes = world.sample_boxes(rng, labels)
        for label, box in zip(labels, boxes):
            confidence = float(np.clip(0.3 - abs(rng.normal(0.0, noise.confidence_noise)), _MIN_CONFIDENCE, 1.0))
            hypotheses.append(
                EntityHypothesis(
                    label=int(label),
                    bbox=tuple(float(v) for v in box),
                    confidence=confidence,
                    feature=_feature(world, rng, int(label), box),
                    gt_index=None,
                )
            )
    return hypotheses
