from langchain_core.runnables import RunnableLambda
from langgraph.graph import StateGraph
from langsmith import traceable

from src.nodes.classifier import classifier_node
from src.nodes.grounding import grounding_node
from src.nodes.ranker import ranker_node
from src.nodes.sampler import sampler_node
from src.nodes.scorer import scorer_node
from src.scene.types import Scene
from src.state import PipelineRuntime, SceneState
from src.utils.conditions import should_classify

# Grounding -> Sampler -> Ranker -> (Classifier) -> Scorer
workflow = StateGraph(SceneState)

workflow.add_node("Grounding", RunnableLambda(grounding_node))
workflow.add_node("Sampler", RunnableLambda(sampler_node))
workflow.add_node("Ranker", RunnableLambda(ranker_node))
workflow.add_node("Classifier", RunnableLambda(classifier_node))
workflow.add_node("Scorer", RunnableLambda(scorer_node))

workflow.set_entry_point("Grounding")
workflow.add_edge("Grounding", "Sampler")
workflow.add_edge("Sampler", "Ranker")

# Edgeless graphs skip classification
workflow.add_conditional_edges(
    "Ranker",
    should_classify,
    {
        "classify": "Classifier",
        "skip": "Scorer",
    },
)
workflow.add_edge("Classifier", "Scorer")
workflow.set_finish_point("Scorer")

app = workflow.compile()


def initial_state(scene: Scene, task: str) -> SceneState:
    return {
        "scene": scene,
        "task": task,
        "hypotheses": [],
        "graph": None,
        "ranked": None,
        "predictions": [],
        "triplets": [],
        "messages": [],
    }


@traceable(name="Run - Scene Graph Pipeline", tags=["pipeline"])
def run_scene(scene: Scene, task: str, runtime: PipelineRuntime) -> SceneState:
    """Drive one scene through the pipeline."""
    return app.invoke(initial_state(scene, task), config={"configurable": {"runtime": runtime}})
