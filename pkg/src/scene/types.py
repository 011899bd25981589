"""Scene records as stored in the JSON-lines dataset files."""

from __future__ import annotations

from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Box = tuple[float, float, float, float]


def _check_box(box: Box) -> Box:
    x1, y1, x2, y2 = box
    if not (x1 < x2 and y1 < y2):
        raise ValueError(f"degenerate box {box}: need x1 < x2 and y1 < y2")
    return box


class GTEntity(BaseModel):
    model_config = ConfigDict(extra="forbid")

    label: int = Field(ge=0)
    bbox: Box
    feature: list[float]

    @field_validator("bbox")
    @classmethod
    def valid_box(cls, box: Box) -> Box:
        return _check_box(box)


class GTEdge(BaseModel):
    model_config = ConfigDict(extra="forbid")

    subj: int = Field(ge=0)
    predicate: int = Field(ge=0)
    obj: int = Field(ge=0)
    zero_shot: bool = False


class EntityHypothesis(BaseModel):
    """One detector output: label, box, confidence, and feature vector."""

    model_config = ConfigDict(extra="forbid")

    label: int = Field(ge=0)
    bbox: Box
    confidence: float = Field(gt=0.0, le=1.0)
    feature: list[float]
    gt_index: Optional[int] = None

    @field_validator("bbox")
    @classmethod
    def valid_box(cls, box: Box) -> Box:
        return _check_box(box)


class Scene(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scene_id: int
    gt_entities: list[GTEntity]
    gt_edges: list[GTEdge]
    hypotheses: list[EntityHypothesis] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_edges(self) -> "Scene":
        n = len(self.gt_entities)
        seen = set()
        for edge in self.gt_edges:
            if edge.subj >= n or edge.obj >= n:
                raise ValueError(f"edge {edge} references a missing entity (n={n})")
            if edge.subj == edge.obj:
                raise ValueError(f"self-loop on entity {edge.subj}")
            key = (edge.subj, edge.predicate, edge.obj)
            if key in seen:
                raise ValueError(f"duplicate triplet {key}")
            seen.add(key)
        return self

    def triplet_types(self) -> set[tuple[int, int, int]]:
        return {
            (self.gt_entities[e.subj].label, e.predicate, self.gt_entities[e.obj].label)
            for e in self.gt_edges
        }


class HypothesisArrays:
    """Column view of a hypothesis list for the models."""

    __slots__ = ("labels", "boxes", "confidences", "features")

    def __init__(self, hypotheses: list[EntityHypothesis], feature_dim: int):
        n = len(hypotheses)
        self.labels = np.array([h.label for h in hypotheses], dtype=np.int64)
        self.boxes = np.array([h.bbox for h in hypotheses], dtype=np.float64).reshape(n, 4)
        self.confidences = np.array([h.confidence for h in hypotheses], dtype=np.float64)
        self.features = np.array([h.feature for h in hypotheses], dtype=np.float64).reshape(n, feature_dim)

    def __len__(self) -> int:
        return len(self.labels)
