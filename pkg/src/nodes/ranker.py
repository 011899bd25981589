from langsmith import traceable

from src.models.ranking import rank_and_truncate
from src.state import get_runtime


@traceable(name="Ranker")
def ranker_node(state, config):
    runtime = get_runtime(config)
    state["ranked"] = rank_and_truncate(state["graph"], runtime.top_k, runtime.ablations.edge_prior_mode)
    state["messages"] = state["messages"] + [f"ranker: kept {len(state['ranked'])} edges"]
    return state
