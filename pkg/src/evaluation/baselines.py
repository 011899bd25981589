"""
Random reference points computed in-suite: a uniform-random predicate
classifier and an Erdos-Renyi sampler matched to another sampler's edge
counts.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from src.models.ggt import order_nodes
from src.models.types import InteractionGraph, PredicatePrediction, RankedEdgeList
from src.scene.types import EntityHypothesis, Scene

_CLASSIFIER_STREAM = 21
_GRAPH_STREAM = 22


class UniformPredicateClassifier:
    """Each edge gets one predicate drawn uniformly at random."""

    def __init__(self, num_predicates: int, seed: int):
        self.num_predicates = num_predicates
        self.seed = seed

    def __call__(
        self, ranked: RankedEdgeList, hypotheses: list[EntityHypothesis], scene: Scene
    ) -> list[PredicatePrediction]:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, _CLASSIFIER_STREAM, scene.scene_id]))
        picks = rng.integers(0, self.num_predicates, size=len(ranked))
        predictions = []
        for pick in picks:
            probs = np.zeros(self.num_predicates + 1)
            probs[pick] = 1.0
            predictions.append(PredicatePrediction(probs=probs))
        return predictions


class ErdosRenyiSampler:
    """
    Uniformly random ordered pairs, as many per scene as the reference
    sampler produced (all pairs when the reference count is unknown).
    """

    def __init__(self, edge_counts: dict[int, int], seed: int, default_count: Optional[int] = None):
        self.edge_counts = edge_counts
        self.seed = seed
        self.default_count = default_count

    def __call__(self, hypotheses: list[EntityHypothesis], scene: Scene) -> InteractionGraph:
        n = len(hypotheses)
        pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
        count = self.edge_counts.get(scene.scene_id, self.default_count)
        count = len(pairs) if count is None else min(count, len(pairs))
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, _GRAPH_STREAM, scene.scene_id]))
        chosen = sorted(rng.choice(len(pairs), size=count, replace=False).tolist()) if count else []
        return InteractionGraph(
            nodes=list(hypotheses), edges=[pairs[c] for c in chosen], decode_order=order_nodes(hypotheses)
        )


class OracleSampler:
    """GT structure: hypotheses are joined when their source entities are."""

    def __call__(self, hypotheses: list[EntityHypothesis], scene: Scene) -> InteractionGraph:
        gt_pairs = {(e.subj, e.obj) for e in scene.gt_edges}
        edges = [
            (i, j)
            for i, a in enumerate(hypotheses)
            for j, b in enumerate(hypotheses)
            if i != j and a.gt_index is not None and b.gt_index is not None and (a.gt_index, b.gt_index) in gt_pairs
        ]
        return InteractionGraph(nodes=list(hypotheses), edges=edges, decode_order=order_nodes(hypotheses))


class OracleClassifier:
    """Puts all mass on the GT predicate of each edge (background when none)."""

    def __init__(self, num_predicates: int):
        self.num_predicates = num_predicates

    def __call__(
        self, ranked: RankedEdgeList, hypotheses: list[EntityHypothesis], scene: Scene
    ) -> list[PredicatePrediction]:
        gt = {}
        for e in scene.gt_edges:
            gt.setdefault((e.subj, e.obj), e.predicate)
        predictions = []
        for edge in ranked:
            a, b = hypotheses[edge.subj].gt_index, hypotheses[edge.obj].gt_index
            probs = np.zeros(self.num_predicates + 1)
            probs[gt.get((a, b), self.num_predicates)] = 1.0
            predictions.append(PredicatePrediction(probs=probs))
        return predictions
