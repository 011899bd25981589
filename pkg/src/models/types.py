"""Intermediate structures passed between the sampler, ranker and classifier."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.errors import DataError, ShapeError
from src.scene.types import EntityHypothesis


@dataclass
class AdjacencyMatrix:
    """Decoded edge probabilities, in original hypothesis indexing."""

    probs: np.ndarray
    binary: Optional[np.ndarray] = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or self.probs.shape[0] != self.probs.shape[1]:
            raise ShapeError(f"adjacency must be square, got {self.probs.shape}")
        if self.probs.size and (self.probs.min() < 0.0 or self.probs.max() > 1.0):
            raise DataError("adjacency probabilities must lie in [0, 1]")

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @classmethod
    def from_probs(cls, probs: np.ndarray, gamma: float) -> "AdjacencyMatrix":
        """Threshold at `gamma`; the diagonal is zeroed and never an edge."""
        probs = np.array(probs, dtype=np.float64)
        np.fill_diagonal(probs, 0.0)
        return cls(probs=probs, binary=probs > gamma)

    def edges(self) -> list[tuple[int, int]]:
        if self.binary is None:
            return []
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.binary))]


@dataclass
class InteractionGraph:
    """Unlabeled directed graph over entity hypotheses."""

    nodes: list[EntityHypothesis]
    edges: list[tuple[int, int]] = field(default_factory=list)
    # order in which nodes were decoded (used when the edge prior is disabled)
    decode_order: list[int] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.nodes)
        seen = set()
        for i, j in self.edges:
            if i == j:
                raise DataError(f"self-loop on node {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise DataError(f"edge ({i}, {j}) references a missing node (n={n})")
            if (i, j) in seen:
                raise DataError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))
        if not self.decode_order:
            self.decode_order = list(range(n))

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class RankedEdge:
    subj: int
    obj: int
    prior: float


@dataclass
class RankedEdgeList:
    edges: list[RankedEdge]
    k: Optional[int] = None

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)

    def pairs(self) -> list[tuple[int, int]]:
        return [(e.subj, e.obj) for e in self.edges]


@dataclass
class PredicatePrediction:
    """
    Distribution over predicate classes for one edge. The last entry is the
    background (no-relation) class.
    """

    probs: np.ndarray
    label: int = field(init=False)
    score: float = field(init=False)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.label = int(np.argmax(self.probs))
        self.score = float(self.probs[self.label])

    @property
    def background(self) -> int:
        return len(self.probs) - 1

    def best_foreground(self) -> tuple[int, float]:
        fg = self.probs[:-1]
        label = int(np.argmax(fg))
        return label, float(fg[label])


@dataclass
class ClassWeights:
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1 or not np.all(self.weights > 0):
            raise DataError(f"class weights must be a positive vector, got {self.weights}")

    def __len__(self) -> int:
        return len(self.weights)
