from langsmith import traceable

from src.models.relation import classify_predicates
from src.state import get_runtime


@traceable(name="Classifier")
def classifier_node(state, config):
    runtime = get_runtime(config)
    nodes = state["graph"].nodes
    if runtime.classifier is not None:
        predictions = runtime.classifier(state["ranked"], nodes, state["scene"])
    else:
        predictions = classify_predicates(runtime.relation_model, state["ranked"], nodes)
    state["predictions"] = predictions
    return state
