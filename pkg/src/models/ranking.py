"""Edge priors from detector confidences and top-K truncation."""

from __future__ import annotations

import math
from typing import Optional

from src.errors import ConfigError
from src.models.types import InteractionGraph, RankedEdge, RankedEdgeList
from src.utils.config import PriorMode


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


def edge_prior(c_i: float, c_j: float, mode: PriorMode = "product") -> float:
    """sigma(c_i * c_j) in product mode, sigma(c_i + c_j) in sum mode."""
    if mode == "product":
        return _sigmoid(c_i * c_j)
    if mode == "sum":
        return _sigmoid(c_i + c_j)
    return 0.5


def rank_and_truncate(graph: InteractionGraph, k: Optional[int], mode: PriorMode = "product") -> RankedEdgeList:
    """
    Score every sampled edge, sort by prior descending (ties by (subj, obj))
    and keep the first `k`; `k=None` keeps all. With mode "none" edges keep
    the decoder's emission order instead.
    """
    if k is not None and k < 0:
        raise ConfigError(f"K must be >= 0, got {k}")
    if mode == "none":
        position = {node: rank for rank, node in enumerate(graph.decode_order)}
        ordered = sorted(graph.edges, key=lambda e: (position[e[0]], position[e[1]]))
        edges = [RankedEdge(subj=i, obj=j, prior=0.5) for i, j in ordered]
    else:
        scored = [
            RankedEdge(
                subj=i,
                obj=j,
                prior=edge_prior(graph.nodes[i].confidence, graph.nodes[j].confidence, mode),
            )
            for i, j in graph.edges
        ]
        edges = sorted(scored, key=lambda e: (-e.prior, e.subj, e.obj))
    return RankedEdgeList(edges=edges if k is None else edges[:k], k=k)
