"""
Configuration schemas and loading.

Environment defaults come from `.env` (python-dotenv); experiment settings
come from a JSON file validated against `ExperimentConfig`. Every model
rejects unknown keys.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.errors import ConfigError

load_dotenv()

Task = Literal["predcls", "sgcls", "sgdet"]
TASKS: tuple[str, ...] = ("predcls", "sgcls", "sgdet")
PriorMode = Literal["product", "sum", "none"]
SpatialBucket = Literal["left_of", "right_of", "above", "below", "overlapping", "containing"]
SPATIAL_BUCKETS: tuple[str, ...] = ("left_of", "right_of", "above", "below", "overlapping", "containing")

DEFAULT_OUTPUT_DIR = os.getenv("ISGGT_OUTPUT_DIR", "runs/default")
DEFAULT_LOG_LEVEL = os.getenv("ISGGT_LOG_LEVEL", "INFO")


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


# ============================================================
# SCENE SYNTHESIS
# ============================================================


class DetectorNoise(StrictModel):
    label_flip_prob: float = Field(0.1, ge=0.0, le=1.0)
    bbox_jitter_scale: float = Field(0.02, ge=0.0, le=1.0)
    false_positive_rate: float = Field(0.1, ge=0.0, le=1.0)
    miss_rate: float = Field(0.05, ge=0.0, le=1.0)
    confidence_noise: float = Field(0.1, ge=0.0, le=1.0)

    @classmethod
    def noiseless(cls) -> "DetectorNoise":
        return cls(
            label_flip_prob=0.0,
            bbox_jitter_scale=0.0,
            false_positive_rate=0.0,
            miss_rate=0.0,
            confidence_noise=0.0,
        )


class RelationRule(StrictModel):
    """Predicate distribution for a (subject, object, bucket) key; None matches anything."""

    subject: Optional[int] = Field(None, ge=0)
    object: Optional[int] = Field(None, ge=0)
    bucket: Optional[SpatialBucket] = None
    probs: list[float]

    @field_validator("probs")
    @classmethod
    def _is_distribution(cls, probs: list[float]) -> list[float]:
        if not probs or any(p < 0.0 or p > 1.0 for p in probs):
            raise ValueError("rule probabilities must lie in [0, 1]")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"rule probabilities sum to {sum(probs)!r}, expected 1")
        return probs


class WorldSpec(StrictModel):
    num_entity_classes: int = Field(10, ge=1, le=150)
    num_predicates: int = Field(8, ge=1, le=50)
    feature_dim: int = Field(32, ge=1)
    predicate_zipf_exponent: float = Field(1.0, ge=0.0)
    # empty list -> rules generated from the seed
    relation_rules: list[RelationRule] = Field(default_factory=list)
    rule_sharpness: float = Field(0.92, ge=0.0, le=1.0)
    min_entities: int = Field(4, ge=1)
    max_entities: int = Field(12, ge=1)
    edge_affinity_high: float = Field(0.35, ge=0.0, le=1.0)
    edge_affinity_low: float = Field(0.03, ge=0.0, le=1.0)
    affinity_density: float = Field(0.3, ge=0.0, le=1.0)
    feature_noise: float = Field(0.3, ge=0.0)
    detector_noise: DetectorNoise = Field(default_factory=DetectorNoise)
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check_ranges(self) -> "WorldSpec":
        if self.min_entities > self.max_entities:
            raise ValueError("min_entities must not exceed max_entities")
        for rule in self.relation_rules:
            if len(rule.probs) != self.num_predicates:
                raise ValueError(f"rule has {len(rule.probs)} probabilities, world has {self.num_predicates} predicates")
            for field_name in ("subject", "object"):
                value = getattr(rule, field_name)
                if value is not None and value >= self.num_entity_classes:
                    raise ValueError(f"rule {field_name} {value} is not a valid class id")
        return self


class DatasetConfig(StrictModel):
    n_train: int = Field(2000, ge=1)
    n_test: int = Field(500, ge=1)
    zero_shot_fraction: float = Field(0.05, ge=0.0, lt=1.0)
    # detector mode for the hypotheses stored with each scene
    stored_hypotheses: Task = "sgdet"


# ============================================================
# MODELS
# ============================================================


class GGTConfig(StrictModel):
    hidden_dim: int = Field(64, ge=1)
    num_layers: int = Field(2, ge=1)
    num_heads: int = Field(4, ge=1)
    max_nodes: int = Field(24, ge=1)
    gamma: float = Field(0.5, gt=0.0, lt=1.0)
    loss_mix: float = Field(0.75, ge=0.0, le=1.0)
    epochs: int = Field(30, ge=0)
    learning_rate: float = Field(1e-3, ge=0.0)
    batch_size: int = Field(16, ge=1)
    train_detector_mode: Task = "sgdet"

    @model_validator(mode="after")
    def _heads_divide_width(self) -> "GGTConfig":
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}")
        return self


class RelationConfig(StrictModel):
    hidden_dim: int = Field(256, ge=1)
    num_heads: int = Field(4, ge=1)
    encoder_layers: int = Field(2, ge=0)
    decoder_layers: int = Field(2, ge=0)
    context_vectors: int = Field(4, ge=1)
    semantic_dim: int = Field(32, ge=1)
    semantic_source: Literal["local", "random", "file"] = "local"
    semantic_table_path: Optional[str] = None
    semantic_trainable: bool = False
    epochs: int = Field(20, ge=0)
    learning_rate: float = Field(1e-4, ge=0.0)
    batch_size: int = Field(8, ge=1)
    training_edges: Literal["gt", "sampled"] = "gt"
    train_detector_mode: Task = "predcls"
    match_iou: float = Field(0.5, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def _check(self) -> "RelationConfig":
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}")
        if self.semantic_source == "file" and not self.semantic_table_path:
            raise ValueError("semantic_source 'file' needs semantic_table_path")
        return self


class AblationFlags(StrictModel):
    global_context: bool = True
    visual_features: bool = True
    semantic_features: bool = True
    graph_sampling: bool = True
    edge_prior_mode: PriorMode = "product"
    node_sampling: bool = False


class EvalConfig(StrictModel):
    tasks: list[Task] = Field(default_factory=lambda: list(TASKS))
    recall_ks: list[int] = Field(default_factory=lambda: [20, 50, 100])
    zero_shot_ks: list[int] = Field(default_factory=lambda: [20, 50])
    # None means "keep every sampled edge"
    top_k_edges: Optional[int] = Field(250, ge=0)
    sweep_ks: list[Optional[int]] = Field(default_factory=lambda: [10, 100, 250, 500, 750, None])
    iou_threshold: float = Field(0.5, gt=0.0, le=1.0)
    min_confidence: float = Field(0.0, ge=0.0, le=1.0)
    max_detections: Optional[int] = Field(None, ge=1)


class SeedConfig(StrictModel):
    ggt: int = Field(1, ge=0)
    relation: int = Field(2, ge=0)
    evaluation: int = Field(3, ge=0)


class ExperimentConfig(StrictModel):
    world: WorldSpec = Field(default_factory=WorldSpec)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    ggt: GGTConfig = Field(default_factory=GGTConfig)
    relation: RelationConfig = Field(default_factory=RelationConfig)
    evaluation: EvalConfig = Field(default_factory=EvalConfig)
    seeds: SeedConfig = Field(default_factory=SeedConfig)
    ablations: AblationFlags = Field(default_factory=AblationFlags)
    output_dir: str = DEFAULT_OUTPUT_DIR

    @classmethod
    def load(cls, path: Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            return cls.model_validate_json(path.read_text(encoding="utf-8"))
        except ValidationError as exc:
            raise ConfigError(f"invalid config {path}:\n{exc}") from exc

    def dump(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2) + "\n", encoding="utf-8")

    def with_overrides(
        self,
        seed: Optional[int] = None,
        output_dir: Optional[str] = None,
        top_k: Optional[list[Optional[int]]] = None,
    ) -> "ExperimentConfig":
        """Apply CLI flags on top of file values."""
        data = self.model_dump()
        if seed is not None:
            data["world"]["seed"] = seed
            data["seeds"] = {"ggt": seed + 1, "relation": seed + 2, "evaluation": seed + 3}
        if output_dir is not None:
            data["output_dir"] = output_dir
        if top_k:
            data["evaluation"]["top_k_edges"] = top_k[0]
            if len(top_k) > 1:
                data["evaluation"]["sweep_ks"] = list(top_k)
        try:
            return ExperimentConfig.model_validate(data)
        except ValidationError as exc:
            raise ConfigError(f"invalid override:\n{exc}") from exc


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(config: ExperimentConfig) -> str:
    """Hash of the experiment settings; the output location is not part of it."""
    data = config.model_dump(mode="json")
    data.pop("output_dir")
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def resume_hash(config: ExperimentConfig, section: str) -> str:
    """Hash of everything that must stay fixed across a resumed training run."""
    data = config.model_dump(mode="json")
    data.pop("output_dir")
    data.pop("evaluation")
    data[section].pop("epochs")
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def file_hash(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()
