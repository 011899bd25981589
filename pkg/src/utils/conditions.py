from typing import Literal


def should_classify(state) -> Literal["classify", "skip"]:
    """Route to the classifier only when ranking left at least one edge."""
    ranked = state.get("ranked")
    if ranked is None or len(ranked) == 0:
        return "skip"
    return "classify"
