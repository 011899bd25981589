from langsmith import traceable

from src.models.ggt import order_nodes
from src.scene.generator import simulate_detector
from src.state import get_runtime


@traceable(name="Grounding")
def grounding_node(state, config):
    """
    Emit the task's entity hypotheses, drop those under the confidence floor
    and keep at most `max_detections`, most confident first.
    """
    runtime = get_runtime(config)
    scene = state["scene"]
    hypotheses = simulate_detector(scene, runtime.spec, state["task"])
    hypotheses = [h for h in hypotheses if h.confidence >= runtime.eval_config.min_confidence]
    keep = sorted(order_nodes(hypotheses)[: runtime.max_detections])
    state["hypotheses"] = [hypotheses[i] for i in keep]
    state["messages"] = state["messages"] + [f"grounding: {len(keep)} hypotheses"]
    return state
