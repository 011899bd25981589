"""
Predicate classifier over ranked edges.

Each edge is embedded from the visual features and boxes of its endpoints
(W_c) fused with their class semantic vectors (W_sv). An encoder lets
edges attend to each other; a decoder cross-attends from edges to a small
set of scene context vectors. The head predicts P predicates plus a
background class at index P.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from src.autodiff import ops
from src.autodiff.nn import Embedding, LayerNorm, Linear, Module, TransformerBlock, padding_mask
from src.autodiff.tensor import Tensor, no_grad
from src.errors import DataError
from src.models.semantics import SemanticEmbeddingTable
from src.models.types import ClassWeights, PredicatePrediction, RankedEdgeList
from src.scene.types import EntityHypothesis, HypothesisArrays
from src.utils.config import AblationFlags, RelationConfig

logger = logging.getLogger(__name__)

GRID_CELLS = 3
_PROB_FLOOR = 1e-12


def layout_descriptor_dim(feature_dim: int) -> int:
    return feature_dim + 4 + 2 + GRID_CELLS * GRID_CELLS


def layout_descriptors(arrays: HypothesisArrays) -> np.ndarray:
    """Per hypothesis: [feature; box; area; confidence; one-hot 3x3 cell of the box center]."""
    n = len(arrays)
    boxes = arrays.boxes
    area = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    cx = np.clip(((boxes[:, 0] + boxes[:, 2]) / 2.0 * GRID_CELLS).astype(np.int64), 0, GRID_CELLS - 1)
    cy = np.clip(((boxes[:, 1] + boxes[:, 3]) / 2.0 * GRID_CELLS).astype(np.int64), 0, GRID_CELLS - 1)
    grid = np.zeros((n, GRID_CELLS * GRID_CELLS))
    grid[np.arange(n), cy * GRID_CELLS + cx] = 1.0
    return np.concatenate([arrays.features, boxes, area[:, None], arrays.confidences[:, None], grid], axis=1)


def pooled_layout(arrays: HypothesisArrays) -> np.ndarray:
    if len(arrays) == 0:
        return np.zeros(layout_descriptor_dim(arrays.features.shape[1]))
    return layout_descriptors(arrays).mean(axis=0)


def pair_inputs(arrays: HypothesisArrays, pairs: Sequence[tuple[int, int]], visual_features: bool = True) -> np.ndarray:
    """[f_i; bb_i; f_j; bb_j] per edge; features are zeroed when visual features are ablated."""
    features = arrays.features if visual_features else np.zeros_like(arrays.features)
    if not pairs:
        return np.zeros((0, 2 * features.shape[1] + 8))
    subj = np.array([p[0] for p in pairs], dtype=np.int64)
    obj = np.array([p[1] for p in pairs], dtype=np.int64)
    return np.concatenate([features[subj], arrays.boxes[subj], features[obj], arrays.boxes[obj]], axis=1)


@dataclass
class GlobalContext:
    vectors: np.ndarray


class EdgeEmbedding(Module):
    """h_v = ReLU(W_c [f_i; bb_i; f_j; bb_j]);  h_sv = ReLU(W_sv [h_v; s_i; s_j])."""

    def __init__(self, feature_dim: int, semantic_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.visual = Linear(2 * feature_dim + 8, hidden_dim, rng)
        self.fused = Linear(hidden_dim + 2 * semantic_dim, hidden_dim, rng)

    def forward(self, pairs: np.ndarray, subj_semantic: Tensor, obj_semantic: Tensor) -> Tensor:
        visual = ops.relu(self.visual(Tensor(pairs)))
        return ops.relu(self.fused(ops.concat([visual, subj_semantic, obj_semantic], axis=-1)))


class SceneContext(Module):
    """M context vectors: learned null vectors plus an MLP of the pooled layout."""

    def __init__(self, descriptor_dim: int, hidden_dim: int, num_vectors: int, rng: np.random.Generator):
        self.num_vectors = num_vectors
        self.hidden_dim = hidden_dim
        null = rng.normal(0.0, hidden_dim**-0.5, size=(num_vectors, hidden_dim))
        self.null_vectors = Tensor(null, requires_grad=True)
        self.pool_projection = Linear(descriptor_dim, hidden_dim, rng)
        self.expand = Linear(hidden_dim, num_vectors * hidden_dim, rng)

    def forward(self, pooled: np.ndarray, nonempty: np.ndarray) -> Tensor:
        """(batch, descriptor) pooled layouts -> (batch, M, hidden)."""
        batch = pooled.shape[0]
        mixed = self.expand(ops.relu(self.pool_projection(Tensor(pooled))))
        mixed = ops.reshape(mixed, (batch, self.num_vectors, self.hidden_dim))
        gate = np.asarray(nonempty, dtype=np.float64)[:, None, None]
        return self.null_vectors + mixed * gate


@dataclass
class RelationBatch:
    pairs: np.ndarray
    subj_labels: np.ndarray
    obj_labels: np.ndarray
    lengths: np.ndarray
    pooled: np.ndarray
    nonempty: np.ndarray
    targets: np.ndarray


@dataclass
class RelationExample:
    pairs: np.ndarray
    subj_labels: np.ndarray
    obj_labels: np.ndarray
    pooled: np.ndarray
    nonempty: bool
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.targets)


def build_relation_example(
    hypotheses: Sequence[EntityHypothesis],
    pairs: Sequence[tuple[int, int]],
    targets: Sequence[int],
    feature_dim: int,
    visual_features: bool = True,
) -> RelationExample:
    arrays = HypothesisArrays(list(hypotheses), feature_dim)
    return RelationExample(
        pairs=pair_inputs(arrays, pairs, visual_features),
        subj_labels=np.array([arrays.labels[i] for i, _ in pairs], dtype=np.int64),
        obj_labels=np.array([arrays.labels[j] for _, j in pairs], dtype=np.int64),
        pooled=pooled_layout(arrays),
        nonempty=len(arrays) > 0,
        targets=np.asarray(targets, dtype=np.int64),
    )


def collate_relation(examples: Sequence[RelationExample]) -> RelationBatch:
    lengths = np.array([len(e) for e in examples], dtype=np.int64)
    width = max(int(lengths.max()), 1)
    batch = len(examples)
    pair_width = examples[0].pairs.shape[1]
    out = RelationBatch(
        pairs=np.zeros((batch, width, pair_width)),
        subj_labels=np.zeros((batch, width), dtype=np.int64),
        obj_labels=np.zeros((batch, width), dtype=np.int64),
        lengths=lengths,
        pooled=np.stack([e.pooled for e in examples]),
        nonempty=np.array([e.nonempty for e in examples]),
        targets=np.zeros((batch, width), dtype=np.int64),
    )
    for b, ex in enumerate(examples):
        n = len(ex)
        out.pairs[b, :n] = ex.pairs
        out.subj_labels[b, :n] = ex.subj_labels
        out.obj_labels[b, :n] = ex.obj_labels
        out.targets[b, :n] = ex.targets
    return out


class RelationPredictor(Module):
    def __init__(
        self,
        feature_dim: int,
        num_classes: int,
        num_predicates: int,
        config: RelationConfig,
        ablations: AblationFlags,
        table: SemanticEmbeddingTable,
        rng: np.random.Generator,
    ):
        if table.num_classes != num_classes:
            raise DataError(f"semantic table has {table.num_classes} rows, expected {num_classes}")
        self.num_predicates = num_predicates
        self.feature_dim = feature_dim
        self.use_semantics = ablations.semantic_features
        self.use_context = ablations.global_context
        self.use_visual = ablations.visual_features
        self.semantic = Embedding(num_classes, table.dim, rng, trainable=config.semantic_trainable)
        self.semantic.table.data = table.vectors.copy()
        self.edge_embedding = EdgeEmbedding(feature_dim, table.dim, config.hidden_dim, rng)
        self.context = SceneContext(
            layout_descriptor_dim(feature_dim), config.hidden_dim, config.context_vectors, rng
        )
        self.encoder = [
            TransformerBlock(config.hidden_dim, config.num_heads, rng) for _ in range(config.encoder_layers)
        ]
        self.decoder = [
            TransformerBlock(config.hidden_dim, config.num_heads, rng, cross_attention=True)
            for _ in range(config.decoder_layers)
        ]
        self.final_norm = LayerNorm(config.hidden_dim)
        self.classifier = Linear(config.hidden_dim, num_predicates + 1, rng)

    @property
    def num_outputs(self) -> int:
        return self.num_predicates + 1

    def edge_features(self, pairs: np.ndarray, subj_labels: np.ndarray, obj_labels: np.ndarray) -> Tensor:
        rows = self.semantic.table.shape[0]
        for labels in (subj_labels, obj_labels):
            if labels.size and (labels.min() < 0 or labels.max() >= rows):
                raise DataError(f"unknown class id in edge endpoints; semantic table has {rows} rows")
        if self.use_semantics:
            subj_sem, obj_sem = self.semantic(subj_labels), self.semantic(obj_labels)
        else:
            shape = subj_labels.shape + (self.semantic.table.shape[1],)
            subj_sem, obj_sem = Tensor(np.zeros(shape)), Tensor(np.zeros(shape))
        return self.edge_embedding(pairs, subj_sem, obj_sem)

    def forward(self, batch: RelationBatch, memory: Optional[Tensor] = None) -> tuple[Tensor, Optional[Tensor]]:
        """Returns logits (batch, edges, P+1) and the last decoder layer's cross-attention weights."""
        x = self.edge_features(batch.pairs, batch.subj_labels, batch.obj_labels)
        mask = padding_mask(batch.lengths, x.shape[1])
        for block in self.encoder:
            x, _ = block(x, mask)
        if self.use_context and memory is None:
            memory = self.context(batch.pooled, batch.nonempty)
        elif not self.use_context:
            memory = None
        weights = None
        for block in self.decoder:
            x, weights = block(x, mask, memory)
        return self.classifier(self.final_norm(x)), weights


def scene_context(model: RelationPredictor, hypotheses: Sequence[EntityHypothesis]) -> GlobalContext:
    arrays = HypothesisArrays(list(hypotheses), model.feature_dim)
    with no_grad():
        vectors = model.context(pooled_layout(arrays)[None], np.array([len(arrays) > 0]))
    return GlobalContext(vectors=vectors.data[0].copy())


def classify_predicates(
    model: RelationPredictor,
    edges: RankedEdgeList,
    hypotheses: Sequence[EntityHypothesis],
    context: Optional[GlobalContext] = None,
) -> list[PredicatePrediction]:
    pairs = edges.pairs()
    if not pairs:
        return []
    example = build_relation_example(
        hypotheses, pairs, np.zeros(len(pairs)), model.feature_dim, visual_features=model.use_visual
    )
    batch = collate_relation([example])
    with no_grad():
        memory = Tensor(context.vectors[None]) if context is not None else None
        logits, _ = model(batch, memory)
        probs = ops.softmax(logits, axis=-1).data[0]
    return [PredicatePrediction(probs=p) for p in probs]


# ============================================================
# LOSS
# ============================================================


def class_weights_from_counts(counts: Sequence[float]) -> ClassWeights:
    """w_r = total / count_r; add one to every count when any is zero."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0 or counts.sum() <= 0:
        raise DataError("cannot derive class weights from an empty set of training edges")
    if np.any(counts == 0):
        counts = counts + 1.0
    return ClassWeights(counts.sum() / counts)


def compute_class_weights(
    examples: Sequence[RelationExample], num_predicates: int, background: bool = False
) -> ClassWeights:
    """
    Inverse-frequency weights over the P+1 output classes, counted from the
    training edges' targets. Without `background` the background class is
    never a target and gets a neutral weight of 1.0.
    """
    if not examples:
        raise DataError("cannot derive class weights from an empty set of training examples")
    counts = np.zeros(num_predicates + 1)
    for example in examples:
        np.add.at(counts, example.targets, 1.0)
    if background:
        return class_weights_from_counts(counts)
    return ClassWeights(np.append(class_weights_from_counts(counts[:-1]).weights, 1.0))



def weighted_ce(
    probs: Tensor, targets: np.ndarray, weights: np.ndarray, mask: Optional[np.ndarray] = None
) -> Tensor:
    """mean over edges of -w[t] * log(max(p[t], 1e-12))."""
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    num_classes = probs.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= num_classes):
        raise DataError(f"target class out of range [0, {num_classes})")
    onehot = np.zeros(probs.shape)
    np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
    valid = np.ones(targets.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    count = max(valid.sum(), 1.0)
    picked = ops.clip(ops.sum(probs * onehot, axis=-1), _PROB_FLOOR, 1.0)
    return -ops.sum(ops.log(picked) * (weights[targets] * valid / count))


def build_relation_model(
    feature_dim: int,
    num_classes: int,
    num_predicates: int,
    config: RelationConfig,
    ablations: AblationFlags,
    table: SemanticEmbeddingTable,
    seed: int,
) -> RelationPredictor:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    return RelationPredictor(feature_dim, num_classes, num_predicates, config, ablations, table, rng)


def load_relation_model(
    arrays: dict[str, np.ndarray],
    feature_dim: int,
    num_classes: int,
    num_predicates: int,
    config: RelationConfig,
    ablations: AblationFlags,
) -> RelationPredictor:
    if "semantic.table" not in arrays:
        raise DataError("relation checkpoint has no semantic table")
    table = SemanticEmbeddingTable(arrays["semantic.table"])
    model = build_relation_model(feature_dim, num_classes, num_predicates, config, ablations, table, seed=0)
    model.load_state_arrays(arrays)
    return model
