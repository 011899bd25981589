from dataclasses import dataclass, field
from typing import Callable, List, Optional, TypedDict

from src.evaluation.metrics import Triplet
from src.models.ggt import GraphGenerativeTransformer
from src.models.relation import RelationPredictor
from src.models.types import InteractionGraph, PredicatePrediction, RankedEdgeList
from src.scene.types import EntityHypothesis, Scene
from src.utils.config import AblationFlags, EvalConfig, GGTConfig, WorldSpec

Sampler = Callable[[List[EntityHypothesis], Scene], InteractionGraph]
Classifier = Callable[[RankedEdgeList, List[EntityHypothesis], Scene], List[PredicatePrediction]]


class SceneState(TypedDict):
    scene: Scene
    task: str
    hypotheses: List[EntityHypothesis]
    graph: Optional[InteractionGraph]
    ranked: Optional[RankedEdgeList]
    predictions: List[PredicatePrediction]
    triplets: List[Triplet]
    messages: List[str]


@dataclass
class PipelineRuntime:
    """Models and settings shared by every scene; passed through config["configurable"]."""

    spec: WorldSpec
    ggt_config: GGTConfig
    eval_config: EvalConfig
    ablations: AblationFlags
    ggt_model: Optional[GraphGenerativeTransformer] = None
    relation_model: Optional[RelationPredictor] = None
    top_k: Optional[int] = 250
    # overrides for oracles and baselines
    sampler: Optional[Sampler] = None
    classifier: Optional[Classifier] = None
    # sampled graphs keyed by (task, scene_id); they do not depend on K
    graph_cache: dict = field(default_factory=dict)

    @property
    def max_detections(self) -> int:
        return self.eval_config.max_detections or self.ggt_config.max_nodes


def get_runtime(config) -> PipelineRuntime:
    return config["configurable"]["runtime"]
