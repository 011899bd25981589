"""Training of the predicate classifier with weighted cross-entropy."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from langsmith import traceable

from src.autodiff import ops
from src.autodiff.optim import Adam, OptimizerState
from src.autodiff.tensor import backward
from src.errors import DataError
from src.evaluation.matching import match_nodes
from src.models.ggt import GraphGenerativeTransformer, order_nodes, sample_for_scene
from src.models.ranking import rank_and_truncate
from src.models.relation import (
    RelationExample,
    RelationPredictor,
    build_relation_example,
    build_relation_model,
    collate_relation,
    compute_class_weights,
    weighted_ce,
)
from src.models.semantics import SemanticEmbeddingTable, build_table
from src.scene.generator import simulate_detector
from src.scene.types import EntityHypothesis, Scene
from src.training.common import LossLog, TrainingResult, ensure_finite, epoch_batches
from src.utils.config import AblationFlags, GGTConfig, RelationConfig, WorldSpec

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("epoch", "loss", "accuracy")


def gt_edge_pairs(scene: Scene, hypotheses: Sequence[EntityHypothesis]) -> tuple[list[tuple[int, int]], list[int]]:
    """GT edges re-indexed onto the hypotheses detected from their endpoints."""
    by_entity: dict[int, int] = {}
    for index, hyp in enumerate(hypotheses):
        if hyp.gt_index is not None and hyp.gt_index not in by_entity:
            by_entity[hyp.gt_index] = index
    pairs, targets = [], []
    for edge in scene.gt_edges:
        if edge.subj in by_entity and edge.obj in by_entity:
            pairs.append((by_entity[edge.subj], by_entity[edge.obj]))
            targets.append(edge.predicate)
    return pairs, targets


def sampled_edge_targets(
    scene: Scene,
    hypotheses: Sequence[EntityHypothesis],
    pairs: Sequence[tuple[int, int]],
    num_predicates: int,
    match_iou: float,
) -> list[int]:
    """
    Label sampled edges through label-agnostic IoU matching of both endpoints;
    unmatched edges get the background class `num_predicates`.
    """
    if not pairs:
        return []
    matched = match_nodes(
        np.array([h.bbox for h in hypotheses]),
        np.array([e.bbox for e in scene.gt_entities]),
        match_iou,
    )
    gt_predicate: dict[tuple[int, int], int] = {}
    for edge in scene.gt_edges:
        gt_predicate.setdefault((edge.subj, edge.obj), edge.predicate)
    targets = []
    for i, j in pairs:
        key = (matched.get(i), matched.get(j))
        targets.append(gt_predicate.get(key, num_predicates))
    return targets


def prepare_examples(
    scenes: Sequence[Scene],
    spec: WorldSpec,
    config: RelationConfig,
    ablations: AblationFlags,
    ggt_model: Optional[GraphGenerativeTransformer] = None,
    ggt_config: Optional[GGTConfig] = None,
    top_k: Optional[int] = None,
) -> list[RelationExample]:
    examples = []
    for scene in scenes:
        hypotheses = simulate_detector(scene, spec, config.train_detector_mode)
        if config.training_edges == "gt":
            pairs, targets = gt_edge_pairs(scene, hypotheses)
        else:
            if ggt_config is None:
                raise DataError("sampled training edges need the GGT configuration")
            kept = [hypotheses[i] for i in order_nodes(hypotheses)[: ggt_config.max_nodes]]
            graph = sample_for_scene(
                kept, ggt_model, ggt_config, ablations.graph_sampling, ablations.node_sampling
            )
            pairs = rank_and_truncate(graph, top_k, ablations.edge_prior_mode).pairs()
            hypotheses = graph.nodes
            targets = sampled_edge_targets(scene, hypotheses, pairs, spec.num_predicates, config.match_iou)
        if pairs:
            examples.append(
                build_relation_example(hypotheses, pairs, targets, spec.feature_dim, ablations.visual_features)
            )
    return examples


@traceable(name="train_relation", tags=["training", "relation"])
def train_relation(
    scenes: Sequence[Scene],
    spec: WorldSpec,
    config: RelationConfig,
    ablations: AblationFlags,
    seed: int,
    ggt_model: Optional[GraphGenerativeTransformer] = None,
    ggt_config: Optional[GGTConfig] = None,
    top_k: Optional[int] = None,
    model: Optional[RelationPredictor] = None,
    optimizer_state: Optional[OptimizerState] = None,
    start_epoch: int = 0,
    loss_log: Optional[Path] = None,
    table: Optional[SemanticEmbeddingTable] = None,
) -> TrainingResult:
    if not scenes:
        raise DataError("cannot train the relation predictor on an empty dataset")
    examples = prepare_examples(scenes, spec, config, ablations, ggt_model, ggt_config, top_k)
    if not examples:
        raise DataError("no training scene yielded a labelled edge")
    sampled = config.training_edges == "sampled"
    weights = compute_class_weights(examples, spec.num_predicates, background=sampled).weights

    if model is None:
        if table is None:
            table = build_table(config, scenes, spec.num_entity_classes, spec.num_predicates, seed)
        model = build_relation_model(
            spec.feature_dim, spec.num_entity_classes, spec.num_predicates, config, ablations, table, seed
        )
    optimizer = Adam(model.named_parameters(), config.learning_rate, optimizer_state)
    log = LossLog(loss_log, LOSS_COLUMNS)
    history = []

    for epoch in range(start_epoch, config.epochs):
        loss_sum, batches, correct, seen = 0.0, 0, 0, 0
        for batch_index, indices in enumerate(epoch_batches(len(examples), config.batch_size, seed, epoch)):
            batch = collate_relation([examples[i] for i in indices])
            valid = np.arange(batch.targets.shape[1])[None, :] < batch.lengths[:, None]
            optimizer.zero_grad()
            logits, _ = model(batch)
            probs = ops.softmax(logits, axis=-1)
            loss = weighted_ce(probs, batch.targets, weights, valid)
            ensure_finite({"loss": loss.item()}, epoch + 1, batch_index)
            backward(loss)
            optimizer.step()
            loss_sum += loss.item()
            batches += 1
            predicted = probs.data.argmax(axis=-1)
            correct += int(((predicted == batch.targets) & valid).sum())
            seen += int(valid.sum())

        row = {"epoch": epoch + 1, "loss": loss_sum / batches, "accuracy": correct / max(seen, 1)}
        history.append(row)
        log.write(row)
        logger.info(
            "relation epoch %d/%d  loss=%.5f  accuracy=%.4f", epoch + 1, config.epochs, row["loss"], row["accuracy"]
        )

    return TrainingResult(
        model=model,
        optimizer=optimizer.state,
        epochs_completed=max(config.epochs, start_epoch),
        history=history,
    )
