import numpy as np
import pytest

from src.scene.types import EntityHypothesis
from src.utils.config import (
    AblationFlags,
    DetectorNoise,
    EvalConfig,
    GGTConfig,
    RelationConfig,
    WorldSpec,
)


@pytest.fixture
def small_spec():
    return WorldSpec(
        num_entity_classes=4,
        num_predicates=3,
        feature_dim=6,
        min_entities=3,
        max_entities=5,
        seed=7,
    )


@pytest.fixture
def noiseless_spec(small_spec):
    return small_spec.model_copy(update={"detector_noise": DetectorNoise.noiseless()})


@pytest.fixture
def tiny_ggt_config():
    return GGTConfig(hidden_dim=8, num_layers=1, num_heads=2, max_nodes=8, epochs=2, batch_size=4)


@pytest.fixture
def tiny_rel_config():
    return RelationConfig(
        hidden_dim=8,
        num_heads=2,
        encoder_layers=1,
        decoder_layers=1,
        context_vectors=2,
        semantic_dim=4,
        epochs=2,
        learning_rate=1e-2,
        batch_size=4,
    )


@pytest.fixture
def ablations():
    return AblationFlags()


@pytest.fixture
def eval_config():
    return EvalConfig(recall_ks=[20, 50, 100], zero_shot_ks=[20, 50], top_k_edges=None)


def make_hypothesis(label, bbox, confidence=1.0, feature_dim=6, gt_index=None, seed=0):
    rng = np.random.default_rng(seed)
    return EntityHypothesis(
        label=label,
        bbox=tuple(bbox),
        confidence=confidence,
        feature=rng.normal(size=feature_dim).tolist(),
        gt_index=gt_index,
    )


@pytest.fixture
def hypothesis_factory():
    return make_hypothesis
