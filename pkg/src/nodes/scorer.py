from langsmith import traceable

from src.evaluation.metrics import Triplet, apply_graph_constraint


def score_triplets(graph, ranked, predictions):
    """
    Triplet score = edge prior * predicate probability. A background argmax
    falls back to the best foreground predicate.
    """
    triplets = []
    for edge, prediction in zip(ranked, predictions):
        predicate, probability = prediction.label, prediction.score
        if predicate == prediction.background:
            predicate, probability = prediction.best_foreground()
        subj, obj = graph.nodes[edge.subj], graph.nodes[edge.obj]
        triplets.append(
            Triplet(
                subj=edge.subj,
                subj_label=subj.label,
                subj_box=subj.bbox,
                predicate=predicate,
                obj=edge.obj,
                obj_label=obj.label,
                obj_box=obj.bbox,
                score=edge.prior * probability,
            )
        )
    return apply_graph_constraint(triplets)


@traceable(name="Scorer")
def scorer_node(state, config):
    if state["ranked"] is None or not state["predictions"]:
        state["triplets"] = []
    else:
        state["triplets"] = score_triplets(state["graph"], state["ranked"], state["predictions"])
    state["messages"] = state["messages"] + [f"scorer: {len(state['triplets'])} triplets"]
    return state
