from langsmith import traceable

from src.models.ggt import sample_for_scene
from src.state import get_runtime


@traceable(name="Sampler")
def sampler_node(state, config):
    runtime = get_runtime(config)
    scene = state["scene"]
    key = (state["task"], scene.scene_id)
    graph = runtime.graph_cache.get(key)
    if graph is None:
        if runtime.sampler is not None:
            graph = runtime.sampler(state["hypotheses"], scene)
        else:
            graph = sample_for_scene(
                state["hypotheses"],
                runtime.ggt_model,
                runtime.ggt_config,
                graph_sampling=runtime.ablations.graph_sampling,
                node_sampling=runtime.ablations.node_sampling,
            )
        runtime.graph_cache[key] = graph
    state["graph"] = graph
    state["messages"] = state["messages"] + [f"sampler: {len(graph.edges)} edges"]
    return state
