"""
Generative graph transformer: decodes one adjacency row per entity
hypothesis, conditioned on features, boxes, labels and the rows already
decoded. Nodes are decoded in confidence order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from src.autodiff import ops
from src.autodiff.nn import Embedding, LayerNorm, Linear, Module, TransformerBlock, causal_mask
from src.autodiff.tensor import Tensor, no_grad
from src.errors import DataError, ShapeError
from src.models.types import AdjacencyMatrix, InteractionGraph
from src.scene.types import EntityHypothesis, HypothesisArrays, Scene
from src.utils.config import GGTConfig

logger = logging.getLogger(__name__)

_PROB_FLOOR = 1e-7


def order_nodes(hypotheses: Sequence[EntityHypothesis]) -> list[int]:
    """Confidence descending; ties by original index."""
    return sorted(range(len(hypotheses)), key=lambda i: (-hypotheses[i].confidence, i))


class GraphGenerativeTransformer(Module):
    """
    Token i = Linear([f_i; bb_i; row_{i-1}]) + label_embedding(l_i) + PE(i).

    Rows are N_max wide and address nodes by decode position.
    """

    def __init__(self, feature_dim: int, num_classes: int, config: GGTConfig, rng: np.random.Generator):
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.max_nodes = config.max_nodes
        self.hidden_dim = config.hidden_dim
        self.input_projection = Linear(feature_dim + 4 + config.max_nodes, config.hidden_dim, rng)
        self.label_embedding = Embedding(num_classes, config.hidden_dim, rng)
        self.blocks = [TransformerBlock(config.hidden_dim, config.num_heads, rng) for _ in range(config.num_layers)]
        self.final_norm = LayerNorm(config.hidden_dim)
        self.row_head = Linear(config.hidden_dim, config.max_nodes, rng)
        self.label_head = Linear(config.hidden_dim, num_classes, rng)

    def forward(
        self,
        features: np.ndarray,
        boxes: np.ndarray,
        labels: np.ndarray,
        previous_rows: np.ndarray,
        lengths: np.ndarray,
    ) -> tuple[Tensor, Tensor]:
        """
        Inputs are padded (batch, length, ...) arrays. Returns sigmoid row
        probabilities (batch, length, N_max) and label logits (batch, length, C).
        """
        batch, length = labels.shape
        if length > self.max_nodes:
            raise ShapeError(f"decoder context of {length} nodes exceeds max_nodes={self.max_nodes}")
        if previous_rows.shape[-1] != self.max_nodes:
            raise ShapeError(f"adjacency rows must be {self.max_nodes} wide, got {previous_rows.shape[-1]}")
        tokens = np.concatenate([features, boxes, previous_rows], axis=-1)
        x = self.input_projection(Tensor(tokens)) + self.label_embedding(labels)
        x = x + ops.sinusoidal_positional_encoding(length, self.hidden_dim)
        mask = causal_mask(lengths, length)
        for block in self.blocks:
            x, _ = block(x, mask)
        x = self.final_norm(x)
        return ops.sigmoid(self.row_head(x)), self.label_head(x)


@dataclass
class DecodeOutput:
    adjacency_row: np.ndarray
    aux_label_logits: np.ndarray


def decode_step(
    model: GraphGenerativeTransformer,
    features: np.ndarray,
    boxes: np.ndarray,
    labels: np.ndarray,
    previous_rows: np.ndarray,
) -> DecodeOutput:
    """Run the decoder on one scene's prefix and return the last position."""
    length = len(labels)
    if length == 0:
        raise ShapeError("decode_step needs a context of at least one node")
    if length > model.max_nodes:
        raise ShapeError(f"decoder context of {length} nodes exceeds max_nodes={model.max_nodes}")
    with no_grad():
        rows, logits = model(
            features[None], boxes[None], np.asarray(labels)[None], previous_rows[None], np.array([length])
        )
    return DecodeOutput(adjacency_row=rows.data[0, -1].copy(), aux_label_logits=logits.data[0, -1].copy())


def sample_graph(
    hypotheses: Sequence[EntityHypothesis],
    model: GraphGenerativeTransformer,
    config: GGTConfig,
    node_sampling: bool = False,
) -> tuple[InteractionGraph, AdjacencyMatrix]:
    """
    Decode rows one node at a time, feeding each thresholded row back as
    context for the next. Edges are returned in original hypothesis indexing.
    """
    n = len(hypotheses)
    if n == 0:
        return InteractionGraph(nodes=[]), AdjacencyMatrix.from_probs(np.zeros((0, 0)), config.gamma)
    if n > model.max_nodes:
        raise ShapeError(f"{n} hypotheses exceed max_nodes={model.max_nodes}")

    order = order_nodes(hypotheses)
    arrays = HypothesisArrays([hypotheses[i] for i in order], model.feature_dim)
    previous = np.zeros((n, model.max_nodes))
    decoded = np.zeros((n, n))
    aux_labels = np.zeros(n, dtype=np.int64)
    for step in range(n):
        out = decode_step(
            model,
            arrays.features[: step + 1],
            arrays.boxes[: step + 1],
            arrays.labels[: step + 1],
            previous[: step + 1],
        )
        row = out.adjacency_row[:n].copy()
        row[step] = 0.0
        decoded[step] = row
        aux_labels[step] = int(np.argmax(out.aux_label_logits))
        if step + 1 < n:
            previous[step + 1, :n] = row > config.gamma

    probs = np.zeros((n, n))
    order_arr = np.asarray(order)
    probs[np.ix_(order_arr, order_arr)] = decoded
    adjacency = AdjacencyMatrix.from_probs(probs, config.gamma)

    nodes = list(hypotheses)
    if node_sampling:
        for position, original in enumerate(order):
            nodes[original] = nodes[original].model_copy(update={"label": int(aux_labels[position])})
    graph = InteractionGraph(nodes=nodes, edges=adjacency.edges(), decode_order=order)
    logger.debug("sampled %d edges over %d nodes", len(graph.edges), n)
    return graph, adjacency


def all_pairs_graph(hypotheses: Sequence[EntityHypothesis]) -> InteractionGraph:
    """Every ordered pair of distinct hypotheses, for the no-sampling ablation."""
    n = len(hypotheses)
    order = order_nodes(hypotheses)
    edges = [(order[a], order[b]) for a in range(n) for b in range(n) if a != b]
    return InteractionGraph(nodes=list(hypotheses), edges=edges, decode_order=order)


# ============================================================
# TRAINING TARGETS AND LOSS
# ============================================================


@dataclass
class GGTExample:
    """One scene prepared for teacher forcing, already in decode order."""

    features: np.ndarray
    boxes: np.ndarray
    labels: np.ndarray
    target_rows: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def build_example(scene: Scene, hypotheses: Sequence[EntityHypothesis], max_nodes: int, feature_dim: int) -> GGTExample:
    """
    Keep the `max_nodes` most confident hypotheses. Two hypotheses are joined
    in the target when the GT entities they were detected from are joined.
    """
    order = order_nodes(hypotheses)[:max_nodes]
    kept = [hypotheses[i] for i in order]
    arrays = HypothesisArrays(kept, feature_dim)
    gt_pairs = {(e.subj, e.obj) for e in scene.gt_edges}
    rows = np.zeros((len(kept), max_nodes))
    for a, ha in enumerate(kept):
        for b, hb in enumerate(kept):
            if a != b and ha.gt_index is not None and hb.gt_index is not None:
                rows[a, b] = float((ha.gt_index, hb.gt_index) in gt_pairs)
    return GGTExample(features=arrays.features, boxes=arrays.boxes, labels=arrays.labels, target_rows=rows)


@dataclass
class GGTBatch:
    features: np.ndarray
    boxes: np.ndarray
    labels: np.ndarray
    previous_rows: np.ndarray
    target_rows: np.ndarray
    lengths: np.ndarray


def collate(examples: Sequence[GGTExample], max_nodes: int) -> GGTBatch:
    """Pad to the longest scene; row i's context is the ground-truth row i-1."""
    lengths = np.array([len(e) for e in examples], dtype=np.int64)
    width = int(lengths.max())
    batch = len(examples)
    feature_dim = examples[0].features.shape[1]
    out = GGTBatch(
        features=np.zeros((batch, width, feature_dim)),
        boxes=np.zeros((batch, width, 4)),
        labels=np.zeros((batch, width), dtype=np.int64),
        previous_rows=np.zeros((batch, width, max_nodes)),
        target_rows=np.zeros((batch, width, max_nodes)),
        lengths=lengths,
    )
    for b, ex in enumerate(examples):
        n = len(ex)
        out.features[b, :n] = ex.features
        out.boxes[b, :n] = ex.boxes
        out.labels[b, :n] = ex.labels
        out.target_rows[b, :n] = ex.target_rows
        out.previous_rows[b, 1:n] = ex.target_rows[: n - 1]
    return out


@dataclass
class GGTLoss:
    total: Tensor
    adjacency: Tensor
    semantic: Tensor


def ggt_loss(
    row_probs: Tensor,
    label_logits: Tensor,
    target_rows: np.ndarray,
    target_labels: np.ndarray,
    lengths: np.ndarray,
    loss_mix: float,
) -> GGTLoss:
    """
    total = loss_mix * L_A + (1 - loss_mix) * L_S.

    L_A is binary cross-entropy averaged over each scene's n(n-1)
    off-diagonal cells, then over scenes; a one-node scene contributes 0.
    L_S is cross-entropy of the label head against the detector labels,
    averaged per scene then over scenes.
    """
    target_rows = np.asarray(target_rows, dtype=np.float64)
    if target_rows.shape != row_probs.shape:
        raise ShapeError(f"target adjacency {target_rows.shape} does not match prediction {row_probs.shape}")
    if not np.isin(target_rows, (0.0, 1.0)).all():
        raise DataError("target adjacency must be binary")
    batch, width, row_width = row_probs.shape
    lengths = np.asarray(lengths, dtype=np.int64)

    positions = np.arange(width)
    columns = np.arange(row_width)
    valid_rows = positions[None, :] < lengths[:, None]
    valid_cols = columns[None, :] < lengths[:, None]
    cells = valid_rows[:, :, None] & valid_cols[:, None, :]
    cells[:, positions, positions] = False
    pair_counts = lengths * (lengths - 1)
    cell_weights = np.where(
        cells, 1.0 / np.maximum(pair_counts, 1)[:, None, None], 0.0
    ) / batch

    p = ops.clip(row_probs, _PROB_FLOOR, 1.0 - _PROB_FLOOR)
    bce = -(target_rows * ops.log(p) + (1.0 - target_rows) * ops.log(1.0 - p))
    adjacency = ops.sum(bce * cell_weights)

    num_classes = label_logits.shape[-1]
    onehot = np.zeros((batch, width, num_classes))
    labels = np.asarray(target_labels, dtype=np.int64)
    onehot[np.arange(batch)[:, None], positions[None, :], np.clip(labels, 0, num_classes - 1)] = 1.0
    node_weights = np.where(valid_rows, 1.0 / np.maximum(lengths, 1)[:, None], 0.0) / batch
    picked = ops.sum(ops.log_softmax(label_logits, axis=-1) * onehot, axis=-1)
    semantic = -ops.sum(picked * node_weights)

    total = adjacency * loss_mix + semantic * (1.0 - loss_mix)
    return GGTLoss(total=total, adjacency=adjacency, semantic=semantic)


def build_model(feature_dim: int, num_classes: int, config: GGTConfig, seed: int) -> GraphGenerativeTransformer:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    return GraphGenerativeTransformer(feature_dim, num_classes, config, rng)


def load_model(
    arrays: dict[str, np.ndarray], feature_dim: int, num_classes: int, config: GGTConfig
) -> GraphGenerativeTransformer:
    model = build_model(feature_dim, num_classes, config, seed=0)
    model.load_state_arrays(arrays)
    return model


def sample_for_scene(
    hypotheses: Sequence[EntityHypothesis],
    model: Optional[GraphGenerativeTransformer],
    config: GGTConfig,
    graph_sampling: bool = True,
    node_sampling: bool = False,
) -> InteractionGraph:
    if not graph_sampling:
        return all_pairs_graph(hypotheses)
    if model is None:
        raise DataError("graph sampling needs a trained GGT checkpoint")
    graph, _ = sample_graph(hypotheses, model, config, node_sampling=node_sampling)
    return graph
