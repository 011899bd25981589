"""MetricReport: machine JSON with stable keys plus a plain-text table."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.errors import DataError

GRAPH_ACC_UNCONSTRAINED = "graph_acc_unconstrained"
GRAPH_ACC_CONSTRAINED = "graph_acc_constrained"


def recall_key(k: Optional[int]) -> str:
    return f"R@{'all' if k is None else k}"


def mean_recall_key(k: Optional[int]) -> str:
    return f"mR@{'all' if k is None else k}"


def zero_shot_key(k: Optional[int]) -> str:
    return f"zsR@{'all' if k is None else k}"


class MetricReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    task: str
    scene_count: int = Field(ge=0)
    top_k_edges: Optional[int] = None
    # "R@20", "mR@100", "zsR@50", "graph_acc_unconstrained", ...
    metrics: dict[str, float] = Field(default_factory=dict)
    # "mR@100" -> {predicate id: recall}
    per_predicate_recall: dict[str, dict[str, float]] = Field(default_factory=dict)
    mean_sampled_edges: float = 0.0

    def __getitem__(self, key: str) -> float:
        return self.metrics[key]

    def to_json(self) -> str:
        """Flat JSON: metric keys sit at the top level next to the run fields."""
        payload = {
            "task": self.task,
            "scene_count": self.scene_count,
            "top_k_edges": self.top_k_edges,
            "mean_sampled_edges": self.mean_sampled_edges,
            "per_predicate_recall": self.per_predicate_recall,
            **self.metrics,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        data = json.loads(text)
        fields = {"task", "scene_count", "top_k_edges", "mean_sampled_edges", "per_predicate_recall"}
        try:
            return cls(
                **{k: v for k, v in data.items() if k in fields},
                metrics={k: v for k, v in data.items() if k not in fields},
            )
        except ValidationError as exc:
            raise DataError(f"malformed metric report:\n{exc}") from exc

    def save(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        path.with_suffix(".txt").write_text(render_table([self]), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "MetricReport":
        path = Path(path)
        if not path.exists():
            raise DataError(f"report not found: {path}")
        return cls.from_json(path.read_text(encoding="utf-8"))


def render_table(reports: list[MetricReport], baselines: Optional[dict[str, MetricReport]] = None) -> str:
    """
    One row per report, one column per metric, values as percentages.
    Graph accuracy is the per-scene mean over scenes with GT edges.
    """
    keys: list[str] = []
    for report in reports + list((baselines or {}).values()):
        for key in report.metrics:
            if key not in keys:
                keys.append(key)
    header = ["task"] + keys
    rows = [[r.task] + [_cell(r.metrics.get(k)) for k in keys] for r in reports]
    for name, report in (baselines or {}).items():
        rows.append([name] + [_cell(report.metrics.get(k)) for k in keys])
    widths = [max(len(str(row[i])) for row in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(str(c).rjust(w) for c, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(str(c).rjust(w) for c, w in zip(row, widths)) for row in rows)
    return "\n".join(lines) + "\n"


def _cell(value: Optional[float]) -> str:
    return "-" if value is None else f"{100.0 * value:.2f}"
