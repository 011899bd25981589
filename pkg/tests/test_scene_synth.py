import numpy as np
import pytest
from pydantic import ValidationError

from src.errors import ConfigError, DataError
from src.scene.dataset import (
    build_dataset,
    dataset_stats,
    read_dataset,
    read_scenes,
    reserve_zero_shot_types,
    write_dataset,
)
from src.scene.generator import generate_scene, simulate_detector
from src.scene.types import GTEdge, GTEntity, Scene
from src.scene.world import (
    ABOVE,
    CONTAINING,
    LEFT_OF,
    OVERLAPPING,
    RIGHT_OF,
    get_world,
    spatial_bucket,
    spatial_buckets,
    zipf_weights,
)
from src.utils.config import DetectorNoise, RelationRule, WorldSpec


def test_zipf_weights_are_a_decreasing_distribution():
    weights = zipf_weights(5, 1.0)
    assert weights.sum() == pytest.approx(1.0)
    assert np.all(np.diff(weights) < 0)
    assert np.allclose(zipf_weights(4, 0.0), 0.25)


@pytest.mark.parametrize(
    "subject, obj, expected",
    [
        ((0.0, 0.0, 1.0, 1.0), (0.2, 0.2, 0.4, 0.4), CONTAINING),
        ((0.0, 0.0, 0.5, 0.5), (0.4, 0.4, 0.9, 0.9), OVERLAPPING),
        ((0.0, 0.0, 0.2, 0.2), (0.6, 0.0, 0.8, 0.2), LEFT_OF),
        ((0.6, 0.0, 0.8, 0.2), (0.0, 0.0, 0.2, 0.2), RIGHT_OF),
        ((0.0, 0.0, 0.2, 0.2), (0.0, 0.6, 0.2, 0.8), ABOVE),
    ],
)
def test_spatial_bucket(subject, obj, expected):
    assert spatial_bucket(subject, obj) == expected
    vectorized = spatial_buckets(np.array([subject]), np.array([obj]))
    assert vectorized.tolist() == [expected]


def test_generation_is_deterministic(small_spec):
    assert generate_scene(small_spec, 3) == generate_scene(small_spec, 3)
    assert generate_scene(small_spec, 3) != generate_scene(small_spec, 4)


def test_scene_respects_entity_bounds_and_edges(small_spec):
    for scene_id in range(20):
        scene = generate_scene(small_spec, scene_id)
        n = len(scene.gt_entities)
        assert small_spec.min_entities <= n <= small_spec.max_entities
        for entity in scene.gt_entities:
            x1, y1, x2, y2 = entity.bbox
            assert 0.0 <= x1 < x2 <= 1.0 and 0.0 <= y1 < y2 <= 1.0
            assert len(entity.feature) == small_spec.feature_dim
        for edge in scene.gt_edges:
            assert edge.subj != edge.obj
            assert 0 <= edge.predicate < small_spec.num_predicates


def test_excluded_types_never_appear(small_spec):
    world = get_world(small_spec)
    excluded = {(s, p, o) for s in range(world.num_classes) for o in range(world.num_classes) for p in (0,)}
    for scene_id in range(15):
        assert not generate_scene(small_spec, scene_id, excluded).triplet_types() & excluded


def test_explicit_rule_table_is_used():
    spec = WorldSpec(
        num_entity_classes=2,
        num_predicates=2,
        feature_dim=3,
        min_entities=4,
        max_entities=4,
        edge_affinity_high=1.0,
        edge_affinity_low=1.0,
        relation_rules=[RelationRule(probs=[0.0, 1.0])],
        seed=1,
    )
    scene = generate_scene(spec, 0)
    assert len(scene.gt_edges) == 12
    assert {e.predicate for e in scene.gt_edges} == {1}


def test_rule_probabilities_must_match_predicates():
    with pytest.raises(ValidationError):
        WorldSpec(num_predicates=3, relation_rules=[RelationRule(probs=[0.5, 0.5])])


def test_predcls_detector_is_exact(small_spec):
    scene = generate_scene(small_spec, 0)
    hyps = simulate_detector(scene, small_spec, "predcls")
    assert [h.label for h in hyps] == [e.label for e in scene.gt_entities]
    assert [h.bbox for h in hyps] == [e.bbox for e in scene.gt_entities]
    assert all(h.confidence == 1.0 for h in hyps)
    assert [h.gt_index for h in hyps] == list(range(len(scene.gt_entities)))


def test_sgcls_keeps_boxes(small_spec):
    scene = generate_scene(small_spec, 1)
    hyps = simulate_detector(scene, small_spec, "sgcls")
    assert [h.bbox for h in hyps] == [e.bbox for e in scene.gt_entities]


def test_noiseless_sgdet_matches_ground_truth(noiseless_spec):
    scene = generate_scene(noiseless_spec, 2)
    hyps = simulate_detector(scene, noiseless_spec, "sgdet")
    assert [h.label for h in hyps] == [e.label for e in scene.gt_entities]
    assert [h.bbox for h in hyps] == [e.bbox for e in scene.gt_entities]


def test_sgdet_emits_false_positives_without_provenance():
    spec = WorldSpec(num_entity_classes=3, num_predicates=2, feature_dim=4, min_entities=8, max_entities=8, seed=5)
    spec = spec.model_copy(
        update={"detector_noise": spec.detector_noise.model_copy(update={"false_positive_rate": 1.0, "miss_rate": 0.0})}
    )
    scene = generate_scene(spec, 0)
    hyps = simulate_detector(scene, spec, "sgdet")
    assert sum(h.gt_index is None for h in hyps) == 8
    assert all(0.0 < h.confidence <= 1.0 for h in hyps)


def test_unknown_detector_mode(small_spec):
    with pytest.raises(ConfigError):
        simulate_detector(generate_scene(small_spec, 0), small_spec, "bogus")


def test_zero_shot_reservation_is_seeded(small_spec):
    first = reserve_zero_shot_types(small_spec, 0.1)
    assert first == reserve_zero_shot_types(small_spec, 0.1)
    assert len(first) == round(0.1 * 4 * 3 * 4)
    assert reserve_zero_shot_types(small_spec, 0.0) == []


def test_zero_shot_fraction_out_of_range(small_spec):
    with pytest.raises(DataError):
        reserve_zero_shot_types(small_spec, 1.0)


def test_dataset_split_excludes_reserved_types(small_spec):
    dataset = build_dataset(small_spec, n_train=30, n_test=30, zero_shot_fraction=0.2, workers=2)
    reserved = set(dataset.zs_triplet_types)
    assert [s.scene_id for s in dataset.train] == list(range(30))
    assert [s.scene_id for s in dataset.test] == list(range(30, 60))
    for scene in dataset.train:
        assert not scene.triplet_types() & reserved
        assert scene.hypotheses
    for scene in dataset.test:
        for edge in scene.gt_edges:
            key = (scene.gt_entities[edge.subj].label, edge.predicate, scene.gt_entities[edge.obj].label)
            assert edge.zero_shot == (key in reserved)


def test_dataset_round_trip(tmp_path, small_spec):
    dataset = build_dataset(small_spec, n_train=5, n_test=3, zero_shot_fraction=0.1)
    paths = write_dataset(dataset, tmp_path)
    loaded = read_dataset(tmp_path)
    assert loaded.spec == small_spec
    assert loaded.train == dataset.train
    assert loaded.test == dataset.test
    assert loaded.zs_triplet_types == dataset.zs_triplet_types
    assert paths["train"].read_bytes() == write_dataset(loaded, tmp_path / "again")["train"].read_bytes()


def test_dataset_writing_is_byte_deterministic(tmp_path, small_spec):
    first = write_dataset(build_dataset(small_spec, 4, 2), tmp_path / "a")
    second = write_dataset(build_dataset(small_spec, 4, 2, workers=3), tmp_path / "b")
    for key in ("train", "test", "header"):
        assert first[key].read_bytes() == second[key].read_bytes()


def test_read_dataset_without_header(tmp_path):
    with pytest.raises(DataError, match="synth"):
        read_dataset(tmp_path)


def test_malformed_scene_line_reports_location(tmp_path):
    path = tmp_path / "train.jsonl"
    path.write_text('{"scene_id": 0, "gt_entities": [], "gt_edges": []}\n{"scene_id": "x"}\n')
    with pytest.raises(DataError, match=":2:"):
        read_scenes(path)


def test_scene_rejects_self_loops():
    entity = GTEntity(label=0, bbox=(0.0, 0.0, 0.5, 0.5), feature=[0.0])
    with pytest.raises(ValidationError):
        Scene(scene_id=0, gt_entities=[entity], gt_edges=[GTEdge(subj=0, predicate=0, obj=0)])


def test_degenerate_box_rejected():
    with pytest.raises(ValidationError):
        GTEntity(label=0, bbox=(0.5, 0.0, 0.5, 1.0), feature=[])


def test_dataset_stats(small_spec):
    dataset = build_dataset(small_spec, n_train=10, n_test=2)
    stats = dataset_stats(dataset)
    assert stats["scenes"] == 10
    assert sum(stats["predicate_histogram"]) == sum(len(s.gt_edges) for s in dataset.train)
    assert small_spec.min_entities <= stats["mean_nodes"] <= small_spec.max_entities


# ------------------------------------------------------------------
# sampled statistics
# ------------------------------------------------------------------


def _predicate_histogram(spec, scenes):
    counts = np.zeros(spec.num_predicates)
    for scene_id in range(scenes):
        for edge in generate_scene(spec, scene_id).gt_edges:
            counts[edge.predicate] += 1
    return counts


@pytest.mark.slow
def test_generated_predicates_follow_zipf_head_to_tail_ratio():
    spec = WorldSpec(predicate_zipf_exponent=1.0, num_predicates=8, seed=11)
    counts = _predicate_histogram(spec, 20_000)
    expected = zipf_weights(8, 1.0)
    ratio = counts[0] / counts[-1]
    assert ratio == pytest.approx(expected[0] / expected[-1], rel=0.05)


@pytest.mark.slow
def test_uniform_rule_without_zipf_gives_uniform_histogram():
    spec = WorldSpec(
        num_predicates=8,
        predicate_zipf_exponent=0.0,
        relation_rules=[RelationRule(probs=[0.125] * 8)],
        seed=12,
    )
    counts = _predicate_histogram(spec, 10_000)
    total = counts.sum()
    sigma = np.sqrt(total * 0.125 * 0.875)
    assert np.all(np.abs(counts - total / 8) <= 3.0 * sigma), counts


def test_sgcls_flip_rate_matches_configured_probability():
    spec = WorldSpec(num_entity_classes=10, feature_dim=2, seed=13)
    spec = spec.model_copy(
        update={"detector_noise": spec.detector_noise.model_copy(update={"label_flip_prob": 0.2})}
    )
    rng = np.random.default_rng(0)
    flipped = total = 0
    for scene_id in range(100):
        labels = rng.integers(0, 10, size=1000)
        entities = [GTEntity(label=int(c), bbox=(0.1, 0.1, 0.3, 0.3), feature=[0.0, 0.0]) for c in labels]
        hyps = simulate_detector(Scene(scene_id=scene_id, gt_entities=entities, gt_edges=[]), spec, "sgcls")
        flipped += sum(h.label != int(c) for h, c in zip(hyps, labels))
        total += len(hyps)
    assert total == 100_000
    assert flipped / total == pytest.approx(0.2, abs=0.01)


def test_rule_lookup_oracle_clears_learnability_floor():
    spec = WorldSpec(detector_noise=DetectorNoise.noiseless(), seed=14)
    world = get_world(spec)
    correct = total = 0
    for scene_id in range(300):
        scene = generate_scene(spec, scene_id)
        hyps = simulate_detector(scene, spec, "predcls")
        for edge in scene.gt_edges:
            subj, obj = hyps[edge.subj], hyps[edge.obj]
            guess = world.bayes_predicate(subj.label, obj.label, spatial_bucket(subj.bbox, obj.bbox))
            correct += guess == edge.predicate
            total += 1
    assert total > 500
    assert correct / total >= 0.9
