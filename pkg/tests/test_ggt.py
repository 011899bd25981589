import math

import numpy as np
import pytest

from src.autodiff.tensor import Tensor
from src.errors import DataError, ShapeError
from src.models.ggt import (
    all_pairs_graph,
    build_example,
    build_model,
    collate,
    decode_step,
    ggt_loss,
    order_nodes,
    sample_for_scene,
    sample_graph,
)
from src.models.types import AdjacencyMatrix, InteractionGraph
from src.scene.generator import generate_scene, simulate_detector
from src.scene.types import GTEdge, GTEntity, HypothesisArrays, Scene


@pytest.fixture
def ggt_model(small_spec, tiny_ggt_config):
    return build_model(small_spec.feature_dim, small_spec.num_entity_classes, tiny_ggt_config, seed=0)


def _hyps(factory, confidences):
    boxes = [(0.1 * i, 0.1, 0.1 * i + 0.2, 0.4) for i in range(len(confidences))]
    return [factory(i % 4, box, c, seed=i) for i, (box, c) in enumerate(zip(boxes, confidences))]


def test_order_nodes_by_confidence(hypothesis_factory):
    hyps = _hyps(hypothesis_factory, [0.3, 0.9, 0.5])
    assert order_nodes(hyps) == [1, 2, 0]


def test_order_nodes_ties_keep_index_order(hypothesis_factory):
    hyps = _hyps(hypothesis_factory, [0.5, 0.9, 0.5])
    assert order_nodes(hyps) == [1, 0, 2]


def test_ggt_loss_at_half_probability_is_ln2():
    lengths = np.array([3, 2])
    probs = Tensor(np.full((2, 3, 5), 0.5), requires_grad=True)
    logits = Tensor(np.zeros((2, 3, 4)), requires_grad=True)
    targets = np.zeros((2, 3, 5))
    targets[0, 0, 1] = 1.0
    loss = ggt_loss(probs, logits, targets, np.zeros((2, 3)), lengths, 0.75)
    assert loss.adjacency.item() == pytest.approx(math.log(2.0))
    assert loss.semantic.item() == pytest.approx(math.log(4.0))
    assert loss.total.item() == pytest.approx(0.75 * math.log(2.0) + 0.25 * math.log(4.0))


def test_ggt_loss_mix_one_is_adjacency_only():
    rng = np.random.default_rng(0)
    probs = Tensor(rng.uniform(0.1, 0.9, size=(1, 3, 4)))
    logits = Tensor(rng.normal(size=(1, 3, 4)))
    targets = np.zeros((1, 3, 4))
    targets[0, 1, 2] = 1.0
    loss = ggt_loss(probs, logits, targets, np.array([[0, 1, 2]]), np.array([3]), 1.0)
    assert loss.total.item() == pytest.approx(loss.adjacency.item())


def test_ggt_loss_ignores_diagonal_and_padding():
    probs = np.full((1, 3, 4), 0.5)
    probs[0, 0, 0] = probs[0, 1, 1] = 0.999
    probs[0, 2, :] = 0.01
    probs[0, :, 2:] = 0.01
    loss = ggt_loss(Tensor(probs), Tensor(np.zeros((1, 3, 2))), np.zeros((1, 3, 4)), np.zeros((1, 3)), np.array([2]), 1.0)
    assert loss.adjacency.item() == pytest.approx(math.log(2.0))


def test_single_node_scene_contributes_zero_adjacency_loss():
    loss = ggt_loss(
        Tensor(np.full((1, 1, 3), 0.9)), Tensor(np.zeros((1, 1, 2))), np.zeros((1, 1, 3)), np.zeros((1, 1)), np.array([1]), 1.0
    )
    assert loss.adjacency.item() == 0.0


def test_ggt_loss_rejects_non_binary_targets():
    targets = np.full((1, 2, 2), 0.5)
    with pytest.raises(DataError):
        ggt_loss(Tensor(np.full((1, 2, 2), 0.5)), Tensor(np.zeros((1, 2, 2))), targets, np.zeros((1, 2)), np.array([2]), 0.5)


def test_ggt_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        ggt_loss(Tensor(np.full((1, 2, 3), 0.5)), Tensor(np.zeros((1, 2, 2))), np.zeros((1, 2, 2)), np.zeros((1, 2)), np.array([2]), 0.5)


def test_forward_shapes(ggt_model, small_spec, tiny_ggt_config):
    rng = np.random.default_rng(0)
    rows, logits = ggt_model(
        rng.normal(size=(2, 4, small_spec.feature_dim)),
        rng.uniform(size=(2, 4, 4)),
        np.zeros((2, 4), dtype=np.int64),
        np.zeros((2, 4, tiny_ggt_config.max_nodes)),
        np.array([4, 3]),
    )
    assert rows.shape == (2, 4, tiny_ggt_config.max_nodes)
    assert logits.shape == (2, 4, small_spec.num_entity_classes)
    assert np.all((rows.data > 0.0) & (rows.data < 1.0))


def test_forward_rejects_context_beyond_max_nodes(ggt_model, small_spec, tiny_ggt_config):
    n = tiny_ggt_config.max_nodes + 1
    with pytest.raises(ShapeError):
        ggt_model(
            np.zeros((1, n, small_spec.feature_dim)),
            np.zeros((1, n, 4)),
            np.zeros((1, n), dtype=np.int64),
            np.zeros((1, n, tiny_ggt_config.max_nodes)),
            np.array([n]),
        )


def test_decoder_is_causal(ggt_model, small_spec, tiny_ggt_config):
    rng = np.random.default_rng(1)
    features = rng.normal(size=(1, 4, small_spec.feature_dim))
    boxes = rng.uniform(size=(1, 4, 4))
    labels = np.array([[0, 1, 2, 3]])
    previous = np.zeros((1, 4, tiny_ggt_config.max_nodes))
    before, _ = ggt_model(features, boxes, labels, previous, np.array([4]))
    features[0, 3] += 5.0
    labels[0, 3] = 0
    previous[0, 3, 0] = 1.0
    after, _ = ggt_model(features, boxes, labels, previous, np.array([4]))
    assert np.array_equal(before.data[0, :3], after.data[0, :3])
    assert not np.array_equal(before.data[0, 3], after.data[0, 3])


def test_decode_step_needs_context(ggt_model, small_spec, tiny_ggt_config):
    with pytest.raises(ShapeError):
        decode_step(
            ggt_model,
            np.zeros((0, small_spec.feature_dim)),
            np.zeros((0, 4)),
            np.zeros(0, dtype=np.int64),
            np.zeros((0, tiny_ggt_config.max_nodes)),
        )


def _layer_norm(x, norm):
    centered = x - x.mean(axis=-1, keepdims=True)
    return centered / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + 1e-5) * norm.gamma.data + norm.beta.data


def _dense(x, layer):
    return x @ layer.weight.data + layer.bias.data


def _causal_self_attention(x, attention):
    n, width = x.shape
    heads, d = attention.num_heads, attention.head_dim
    projections = (attention.query, attention.key, attention.value)
    q, k, v = (_dense(x, layer).reshape(n, heads, d).transpose(1, 0, 2) for layer in projections)
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(d)
    scores = np.where(np.tril(np.ones((n, n), dtype=bool)), scores, -np.inf)
    weights = np.exp(scores - scores.max(axis=-1, keepdims=True))
    weights /= weights.sum(axis=-1, keepdims=True)
    merged = (weights @ v).transpose(1, 0, 2).reshape(n, width)
    return _dense(merged, attention.output)


def _reference_decode(model, features, boxes, labels, previous):
    """The decoder written out with plain numpy on the model's weights."""
    n, width = len(labels), model.hidden_dim
    pe = np.zeros((n, width))
    for pos in range(n):
        for i in range(0, width, 2):
            angle = pos / 10000.0 ** (i / width)
            pe[pos, i] = math.sin(angle)
            if i + 1 < width:
                pe[pos, i + 1] = math.cos(angle)
    x = _dense(np.concatenate([features, boxes, previous], axis=1), model.input_projection)
    x = x + model.label_embedding.table.data[labels] + pe
    for block in model.blocks:
        x = x + _causal_self_attention(_layer_norm(x, block.self_norm), block.self_attention)
        hidden = np.maximum(_dense(_layer_norm(x, block.ffn_norm), block.ffn.expand), 0.0)
        x = x + _dense(hidden, block.ffn.project)
    x = _layer_norm(x, model.final_norm)
    rows = 1.0 / (1.0 + np.exp(-_dense(x, model.row_head)))
    return rows[-1], _dense(x, model.label_head)[-1]


def test_decode_step_matches_reference_forward(small_spec, tiny_ggt_config):
    config = tiny_ggt_config.model_copy(update={"num_layers": 2})
    model = build_model(small_spec.feature_dim, small_spec.num_entity_classes, config, seed=3)
    rng = np.random.default_rng(7)
    for tensor in model.named_parameters().values():
        tensor.data = tensor.data + rng.normal(0.0, 0.1, size=tensor.shape)
    n = 5
    features = rng.normal(size=(n, small_spec.feature_dim))
    boxes = rng.uniform(size=(n, 4))
    labels = rng.integers(0, small_spec.num_entity_classes, size=n)
    previous = (rng.uniform(size=(n, config.max_nodes)) > 0.5).astype(np.float64)
    out = decode_step(model, features, boxes, labels, previous)
    row, logits = _reference_decode(model, features, boxes, labels, previous)
    assert np.allclose(out.adjacency_row, row, rtol=0.0, atol=1e-12)
    assert np.allclose(out.aux_label_logits, logits, rtol=0.0, atol=1e-12)


def test_sample_graph_has_no_self_loops(ggt_model, tiny_ggt_config, hypothesis_factory):
    hyps = _hyps(hypothesis_factory, [0.4, 0.8, 0.6, 0.9, 0.2])
    graph, adjacency = sample_graph(hyps, ggt_model, tiny_ggt_config)
    assert adjacency.n == 5
    assert np.all(np.diag(adjacency.probs) == 0.0)
    assert all(i != j for i, j in graph.edges)
    assert graph.decode_order == [3, 1, 2, 0, 4]


def test_sample_graph_edges_match_replayed_decoding(ggt_model, small_spec, tiny_ggt_config, hypothesis_factory):
    hyps = _hyps(hypothesis_factory, [0.4, 0.8, 0.6, 0.9, 0.2])
    order, n, gamma = [3, 1, 2, 0, 4], 5, tiny_ggt_config.gamma
    arrays = HypothesisArrays([hyps[i] for i in order], small_spec.feature_dim)
    previous = np.zeros((n, tiny_ggt_config.max_nodes))
    expected = set()
    for step in range(n):
        out = decode_step(
            ggt_model,
            arrays.features[: step + 1],
            arrays.boxes[: step + 1],
            arrays.labels[: step + 1],
            previous[: step + 1],
        )
        for b in range(n):
            if b != step and out.adjacency_row[b] > gamma:
                expected.add((order[step], order[b]))
        if step + 1 < n:
            previous[step + 1, :n] = [b != step and out.adjacency_row[b] > gamma for b in range(n)]
    graph, _ = sample_graph(hyps, ggt_model, tiny_ggt_config)
    assert set(graph.edges) == expected


@pytest.mark.parametrize("gamma, edge_count", [(1e-9, 20), (1.0 - 1e-9, 0)])
def test_sample_graph_threshold_extremes(ggt_model, tiny_ggt_config, hypothesis_factory, gamma, edge_count):
    hyps = _hyps(hypothesis_factory, [0.4, 0.8, 0.6, 0.9, 0.2])
    graph, _ = sample_graph(hyps, ggt_model, tiny_ggt_config.model_copy(update={"gamma": gamma}))
    assert len(graph.edges) == edge_count



def test_sample_graph_is_deterministic(ggt_model, tiny_ggt_config, hypothesis_factory):
    hyps = _hyps(hypothesis_factory, [0.4, 0.8, 0.6])
    first, _ = sample_graph(hyps, ggt_model, tiny_ggt_config)
    second, _ = sample_graph(hyps, ggt_model, tiny_ggt_config)
    assert first.edges == second.edges


def test_sample_graph_empty_and_oversized(ggt_model, tiny_ggt_config, hypothesis_factory):
    graph, adjacency = sample_graph([], ggt_model, tiny_ggt_config)
    assert graph.edges == [] and adjacency.n == 0
    too_many = _hyps(hypothesis_factory, [0.5] * (tiny_ggt_config.max_nodes + 1))
    with pytest.raises(ShapeError):
        sample_graph(too_many, ggt_model, tiny_ggt_config)


def test_node_sampling_relabels_nodes(ggt_model, tiny_ggt_config, hypothesis_factory):
    hyps = _hyps(hypothesis_factory, [0.4, 0.8, 0.6])
    graph, _ = sample_graph(hyps, ggt_model, tiny_ggt_config, node_sampling=True)
    assert [h.bbox for h in graph.nodes] == [h.bbox for h in hyps]
    assert all(0 <= h.label < 4 for h in graph.nodes)


def test_all_pairs_graph(hypothesis_factory):
    graph = all_pairs_graph(_hyps(hypothesis_factory, [0.5, 0.6, 0.7]))
    assert len(graph.edges) == 6
    assert graph.edges[0] == (2, 1)


def test_sample_for_scene_needs_model(tiny_ggt_config, hypothesis_factory):
    hyps = _hyps(hypothesis_factory, [0.5, 0.6])
    with pytest.raises(DataError):
        sample_for_scene(hyps, None, tiny_ggt_config)
    assert len(sample_for_scene(hyps, None, tiny_ggt_config, graph_sampling=False).edges) == 2


def test_build_example_targets_follow_provenance(hypothesis_factory):
    entities = [GTEntity(label=i, bbox=(0.1 * i, 0.0, 0.1 * i + 0.1, 0.1), feature=[0.0] * 6) for i in range(3)]
    scene = Scene(scene_id=0, gt_entities=entities, gt_edges=[GTEdge(subj=0, predicate=1, obj=2)])
    hyps = [
        hypothesis_factory(0, entities[0].bbox, 0.5, gt_index=0),
        hypothesis_factory(2, entities[2].bbox, 0.9, gt_index=2),
        hypothesis_factory(1, (0.5, 0.5, 0.6, 0.6), 0.7, gt_index=None),
    ]
    example = build_example(scene, hyps, max_nodes=5, feature_dim=6)
    # decode order: [1, 2, 0]; GT edge 0->2 is position 2 -> position 0
    assert example.labels.tolist() == [2, 1, 0]
    expected = np.zeros((3, 5))
    expected[2, 0] = 1.0
    assert np.array_equal(example.target_rows, expected)


def test_collate_shifts_previous_rows(small_spec):
    scene = generate_scene(small_spec, 0)
    hyps = simulate_detector(scene, small_spec, "predcls")
    examples = [build_example(scene, hyps, 8, small_spec.feature_dim), build_example(scene, hyps[:2], 8, small_spec.feature_dim)]
    batch = collate(examples, 8)
    n = len(examples[0])
    assert batch.lengths.tolist() == [n, 2]
    assert np.all(batch.previous_rows[:, 0] == 0.0)
    assert np.array_equal(batch.previous_rows[0, 1:n], examples[0].target_rows[: n - 1])
    assert np.all(batch.target_rows[1, 2:] == 0.0)


def test_adjacency_from_probs_zeroes_diagonal():
    adjacency = AdjacencyMatrix.from_probs(np.array([[0.9, 0.6], [0.4, 0.9]]), 0.5)
    assert adjacency.edges() == [(0, 1)]
    assert adjacency.probs[0, 0] == 0.0


def test_interaction_graph_validation(hypothesis_factory):
    nodes = _hyps(hypothesis_factory, [0.5, 0.5])
    with pytest.raises(DataError):
        InteractionGraph(nodes=nodes, edges=[(0, 0)])
    with pytest.raises(DataError):
        InteractionGraph(nodes=nodes, edges=[(0, 2)])
    with pytest.raises(DataError):
        InteractionGraph(nodes=nodes, edges=[(0, 1), (0, 1)])
