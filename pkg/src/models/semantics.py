"""
Per-class semantic vectors for the relation predictor.

Three sources:
  local   PPMI of class/predicate-role co-occurrence in the training split, reduced by SVD
  random  seeded Gaussian rows
  file    external table: uint64 count, uint64 dim, then count*dim little-endian float64
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from src.errors import ConfigError, DataError
from src.scene.types import Scene
from src.utils.config import RelationConfig

logger = logging.getLogger(__name__)

_FILE_HEADER = struct.Struct("<QQ")
_RANDOM_STREAM = 11


class SemanticEmbeddingTable:
    def __init__(self, vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] < 1:
            raise DataError(f"semantic table must be (classes, dim), got {vectors.shape}")
        if not np.all(np.isfinite(vectors)):
            raise DataError("semantic table contains non-finite values")
        self.vectors = vectors

    @property
    def num_classes(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, labels: Sequence[int]) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DataError(f"unknown class id in {sorted(set(labels.tolist()))}; table has {self.num_classes} rows")
        return self.vectors[labels]


def cooccurrence_counts(scenes: Iterable[Scene], num_classes: int, num_predicates: int) -> np.ndarray:
    """
    Rows are classes; columns are (as-subject-of p), (as-object-of p) and
    (shares a scene with class c).
    """
    counts = np.zeros((num_classes, 2 * num_predicates + num_classes))
    for scene in scenes:
        labels = [e.label for e in scene.gt_entities]
        for edge in scene.gt_edges:
            counts[labels[edge.subj], edge.predicate] += 1.0
            counts[labels[edge.obj], num_predicates + edge.predicate] += 1.0
        present = sorted(set(labels))
        for a in present:
            for b in present:
                if a != b:
                    counts[a, 2 * num_predicates + b] += 1.0
    return counts


def ppmi(counts: np.ndarray) -> np.ndarray:
    total = counts.sum()
    if total <= 0:
        return np.zeros_like(counts)
    rows = counts.sum(axis=1, keepdims=True)
    cols = counts.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(counts * total / (rows * cols))
    return np.where(np.isfinite(pmi) & (pmi > 0), pmi, 0.0)


def local_table(scenes: Sequence[Scene], num_classes: int, num_predicates: int, dim: int) -> SemanticEmbeddingTable:
    matrix = ppmi(cooccurrence_counts(scenes, num_classes, num_predicates))
    u, s, _ = np.linalg.svd(matrix, full_matrices=False)
    components = min(dim, len(s))
    vectors = np.zeros((num_classes, dim))
    vectors[:, :components] = u[:, :components] * np.sqrt(s[:components])
    # SVD sign is arbitrary; pin it so the largest entry of each component is positive
    signs = np.sign(vectors[np.argmax(np.abs(vectors), axis=0), np.arange(dim)])
    vectors *= np.where(signs == 0, 1.0, signs)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    vectors = np.where(norms > 0, vectors / np.maximum(norms, 1e-12), 0.0)
    logger.debug("local semantic table: %d classes, %d of %d dims populated", num_classes, components, dim)
    return SemanticEmbeddingTable(vectors)


def random_table(num_classes: int, dim: int, seed: int) -> SemanticEmbeddingTable:
    rng = np.random.default_rng(np.random.SeedSequence([seed, _RANDOM_STREAM]))
    return SemanticEmbeddingTable(rng.normal(0.0, dim**-0.5, size=(num_classes, dim)))


def read_table(path: Path) -> SemanticEmbeddingTable:
    path = Path(path)
    if not path.exists():
        raise DataError(f"semantic table not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _FILE_HEADER.size:
        raise DataError(f"{path}: truncated semantic table header")
    count, dim = _FILE_HEADER.unpack_from(raw, 0)
    expected = _FILE_HEADER.size + 8 * count * dim
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for a {count}x{dim} table, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=_FILE_HEADER.size).astype(np.float64)
    return SemanticEmbeddingTable(values.reshape(count, dim))


def write_table(table: SemanticEmbeddingTable, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_FILE_HEADER.pack(table.num_classes, table.dim))
        fh.write(np.ascontiguousarray(table.vectors, dtype="<f8").tobytes())


def build_table(
    config: RelationConfig, scenes: Sequence[Scene], num_classes: int, num_predicates: int, seed: int
) -> SemanticEmbeddingTable:
    if config.semantic_source == "local":
        table = local_table(scenes, num_classes, num_predicates, config.semantic_dim)
    elif config.semantic_source == "random":
        table = random_table(num_classes, config.semantic_dim, seed)
    else:
        table = read_table(Path(config.semantic_table_path))
    if table.num_classes != num_classes:
        raise DataError(f"semantic table has {table.num_classes} rows, world has {num_classes} classes")
    if table.dim != config.semantic_dim:
        raise ConfigError(f"semantic table is {table.dim}-d but relation.semantic_dim is {config.semantic_dim}")
    return table
