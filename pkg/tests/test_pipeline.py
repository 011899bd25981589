"""
End-to-end behaviour of the scene graph pipeline: routing, caching, oracle
injection and stage replacement through monkeypatching.
"""

import numpy as np
import pytest

import src.graph_pipeline as graph_pipeline
from src.errors import DataError
from src.evaluation.baselines import (
    ErdosRenyiSampler,
    OracleClassifier,
    OracleSampler,
    UniformPredicateClassifier,
)
from src.evaluation.runner import baseline_reports, check_runtime, run_sweep, run_task, sweep_columns
from src.graph_pipeline import initial_state, run_scene
from src.models.ggt import build_model
from src.models.relation import build_relation_model
from src.models.semantics import random_table
from src.models.types import RankedEdge, RankedEdgeList
from src.nodes.scorer import score_triplets
from src.scene.dataset import build_dataset
from src.state import PipelineRuntime
from src.utils.conditions import should_classify
from src.utils.config import AblationFlags


@pytest.fixture
def scenes(noiseless_spec):
    return build_dataset(noiseless_spec, n_train=1, n_test=6).test


@pytest.fixture
def oracle_runtime(noiseless_spec, tiny_ggt_config, eval_config):
    return PipelineRuntime(
        spec=noiseless_spec,
        ggt_config=tiny_ggt_config,
        eval_config=eval_config,
        ablations=AblationFlags(),
        top_k=None,
        sampler=OracleSampler(),
        classifier=OracleClassifier(noiseless_spec.num_predicates),
    )


@pytest.fixture
def model_runtime(small_spec, tiny_ggt_config, tiny_rel_config, eval_config):
    table = random_table(small_spec.num_entity_classes, tiny_rel_config.semantic_dim, 0)
    return PipelineRuntime(
        spec=small_spec,
        ggt_config=tiny_ggt_config,
        eval_config=eval_config,
        ablations=AblationFlags(),
        ggt_model=build_model(small_spec.feature_dim, small_spec.num_entity_classes, tiny_ggt_config, 0),
        relation_model=build_relation_model(
            small_spec.feature_dim,
            small_spec.num_entity_classes,
            small_spec.num_predicates,
            tiny_rel_config,
            AblationFlags(),
            table,
            0,
        ),
        top_k=None,
    )


def test_should_classify_routes_on_edges():
    assert should_classify({"ranked": None}) == "skip"
    assert should_classify({"ranked": RankedEdgeList(edges=[])}) == "skip"
    assert should_classify({"ranked": RankedEdgeList(edges=[RankedEdge(0, 1, 0.5)])}) == "classify"


def test_oracle_predcls_is_perfect(scenes, oracle_runtime):
    report = run_task("predcls", scenes, oracle_runtime)
    assert report["R@100"] == pytest.approx(1.0)
    assert report["graph_acc_unconstrained"] == pytest.approx(1.0)
    assert report["graph_acc_constrained"] == pytest.approx(1.0)
    assert report.scene_count == len(scenes)


def test_pipeline_state_is_complete(scenes, model_runtime):
    state = run_scene(scenes[0], "sgdet", model_runtime)
    assert state["graph"] is not None
    assert len(state["predictions"]) == len(state["ranked"])
    assert [m.split(":")[0] for m in state["messages"]][:3] == ["grounding", "sampler", "ranker"]
    pairs = [(t.subj, t.obj) for t in state["triplets"]]
    assert len(pairs) == len(set(pairs))


def test_empty_ranking_skips_classifier(scenes, oracle_runtime, monkeypatch):
    def forbidden(ranked, hypotheses, scene):
        raise AssertionError("classifier must not run on an empty ranking")

    monkeypatch.setattr(oracle_runtime, "top_k", 0)
    monkeypatch.setattr(oracle_runtime, "classifier", forbidden)
    state = run_scene(scenes[0], "predcls", oracle_runtime)
    assert state["triplets"] == []
    assert state["predictions"] == []
    assert state["messages"][-1] == "scorer: 0 triplets"


def test_graphs_are_cached_across_k(scenes, oracle_runtime):
    calls = []
    inner = oracle_runtime.sampler

    def counting(hypotheses, scene):
        calls.append(scene.scene_id)
        return inner(hypotheses, scene)

    oracle_runtime.sampler = counting
    rows = run_sweep([1, None], ["predcls"], scenes, oracle_runtime)
    assert len(calls) == len(scenes)
    assert [row["k"] for row in rows] == [1, "all"]
    assert set(rows[0]) == set(sweep_columns(["predcls"]))


def test_max_detections_caps_hypotheses(scenes, oracle_runtime):
    oracle_runtime.eval_config = oracle_runtime.eval_config.model_copy(update={"max_detections": 2})
    state = run_scene(scenes[0], "predcls", oracle_runtime)
    assert len(state["hypotheses"]) <= 2


def test_replaced_stage_is_used(scenes, oracle_runtime, monkeypatch):
    """Swap the scorer for a stub by rebuilding the graph after monkeypatching."""
    import importlib

    import src.nodes.scorer

    def stub_scorer(state, config):
        state["triplets"] = []
        state["messages"] = state["messages"] + ["scorer: stubbed"]
        return state

    monkeypatch.setattr(src.nodes.scorer, "scorer_node", stub_scorer)
    try:
        patched = importlib.reload(graph_pipeline)
        state = patched.app.invoke(
            initial_state(scenes[0], "predcls"), config={"configurable": {"runtime": oracle_runtime}}
        )
        assert state["messages"][-1] == "scorer: stubbed"
    finally:
        monkeypatch.undo()
        importlib.reload(graph_pipeline)


def test_missing_models_raise(small_spec, tiny_ggt_config, eval_config):
    runtime = PipelineRuntime(spec=small_spec, ggt_config=tiny_ggt_config, eval_config=eval_config, ablations=AblationFlags())
    with pytest.raises(DataError, match="train-ggt"):
        check_runtime(runtime)
    runtime.sampler = OracleSampler()
    with pytest.raises(DataError, match="train-rel"):
        check_runtime(runtime)


def test_unknown_task(scenes, oracle_runtime):
    with pytest.raises(DataError):
        run_task("bogus", scenes, oracle_runtime)


def test_score_is_prior_times_probability(hypothesis_factory):
    from src.models.types import InteractionGraph, PredicatePrediction

    nodes = [hypothesis_factory(0, (0.0, 0.0, 0.2, 0.2)), hypothesis_factory(1, (0.5, 0.5, 0.7, 0.7))]
    graph = InteractionGraph(nodes=nodes, edges=[(0, 1), (1, 0)])
    ranked = RankedEdgeList(edges=[RankedEdge(0, 1, 0.8), RankedEdge(1, 0, 0.6)])
    predictions = [
        PredicatePrediction(probs=np.array([0.1, 0.7, 0.2])),
        # background argmax falls back to the best foreground predicate
        PredicatePrediction(probs=np.array([0.3, 0.1, 0.6])),
    ]
    triplets = score_triplets(graph, ranked, predictions)
    assert [(t.predicate, t.score) for t in triplets] == [(1, pytest.approx(0.56)), (0, pytest.approx(0.18))]


def test_baselines_score_below_oracle(scenes, oracle_runtime):
    reports = baseline_reports("predcls", scenes, oracle_runtime, seed=0)
    assert set(reports) == {"uniform-predicate", "erdos-renyi"}
    assert reports["uniform-predicate"]["graph_acc_unconstrained"] == pytest.approx(1.0)
    assert all(0.0 <= r["R@100"] <= 1.0 for r in reports.values())


def test_erdos_renyi_matches_edge_counts(scenes, hypothesis_factory):
    hyps = [hypothesis_factory(i % 4, (0.1 * i, 0.1, 0.1 * i + 0.1, 0.3)) for i in range(4)]
    sampler = ErdosRenyiSampler({scenes[0].scene_id: 5}, seed=1)
    graph = sampler(hyps, scenes[0])
    assert len(graph.edges) == 5
    assert graph.edges == sampler(hyps, scenes[0]).edges
    assert len(ErdosRenyiSampler({}, seed=1)(hyps, scenes[0]).edges) == 12


def test_uniform_classifier_is_one_hot(scenes):
    classifier = UniformPredicateClassifier(3, seed=0)
    ranked = RankedEdgeList(edges=[RankedEdge(0, 1, 0.5), RankedEdge(1, 0, 0.5)])
    predictions = classifier(ranked, [], scenes[0])
    assert all(p.probs.sum() == 1.0 and p.label < 3 for p in predictions)
