"""
Train/test dataset construction with reserved zero-shot triplet types,
plus JSON-lines persistence and summary statistics.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import ValidationError

from src.errors import DataError
from src.scene.generator import TripletType, generate_scene, simulate_detector
from src.scene.types import Scene
from src.scene.world import get_world
from src.utils.config import WorldSpec

logger = logging.getLogger(__name__)

DATASET_FORMAT_VERSION = 1
TRAIN_FILE = "train.jsonl"
TEST_FILE = "test.jsonl"
HEADER_FILE = "dataset.header.json"
_ZERO_SHOT_STREAM = 7


@dataclass
class Dataset:
    spec: WorldSpec
    train: list[Scene]
    test: list[Scene]
    zs_triplet_types: list[TripletType] = field(default_factory=list)


def reserve_zero_shot_types(spec: WorldSpec, fraction: float) -> list[TripletType]:
    """Pick round(fraction * C*P*C) triplet types uniformly without replacement."""
    if not 0.0 <= fraction < 1.0:
        raise DataError(f"zero_shot_fraction must lie in [0, 1), got {fraction}")
    world = get_world(spec)
    c, p = world.num_classes, world.num_predicates
    total = c * p * c
    count = int(round(fraction * total))
    if count == 0:
        return []
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _ZERO_SHOT_STREAM]))
    flat = np.sort(rng.choice(total, size=count, replace=False))
    reserved = [tuple(int(v) for v in np.unravel_index(f, (c, p, c))) for f in flat]

    allowed = world.rules > 0.0
    for s, pred, o in reserved:
        allowed[s, o, :, pred] = False
    if not allowed.any():
        raise DataError(f"reserving {count} zero-shot types would leave the relation-rule table empty")
    return reserved


def build_dataset(
    spec: WorldSpec,
    n_train: int,
    n_test: int,
    zero_shot_fraction: float = 0.0,
    stored_hypotheses: str = "sgdet",
    workers: int = 1,
) -> Dataset:
    """
    Scene ids 0..n_train-1 form the training split and never contain a
    reserved type; ids n_train.. form the test split, whose reserved-type
    edges are marked zero-shot.
    """
    zs_types = reserve_zero_shot_types(spec, zero_shot_fraction)
    zs_set = set(zs_types)

    def make_train(scene_id: int) -> Scene:
        scene = generate_scene(spec, scene_id, excluded_types=zs_set)
        scene.hypotheses = simulate_detector(scene, spec, stored_hypotheses)
        return scene

    def make_test(scene_id: int) -> Scene:
        scene = generate_scene(spec, scene_id)
        for edge in scene.gt_edges:
            key = (scene.gt_entities[edge.subj].label, edge.predicate, scene.gt_entities[edge.obj].label)
            edge.zero_shot = key in zs_set
        scene.hypotheses = simulate_detector(scene, spec, stored_hypotheses)
        return scene

    with ThreadPoolExecutor(max_workers=max(workers, 1)) as executor:
        train = list(executor.map(make_train, range(n_train)))
        test = list(executor.map(make_test, range(n_train, n_train + n_test)))
    logger.info(
        "built dataset: %d train, %d test scenes, %d reserved zero-shot types",
        len(train),
        len(test),
        len(zs_types),
    )
    return Dataset(spec=spec, train=train, test=test, zs_triplet_types=zs_types)


# ============================================================
# PERSISTENCE
# ============================================================


def write_scenes(path: Path, scenes: list[Scene]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for scene in scenes:
            fh.write(scene.model_dump_json())
            fh.write("\n")


def read_scenes(path: Path) -> list[Scene]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    scenes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                scenes.append(Scene.model_validate_json(line))
            except ValidationError as exc:
                raise DataError(f"{path}:{lineno}: malformed scene record\n{exc}") from exc
    return scenes


def write_dataset(dataset: Dataset, directory: Path) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "train": directory / TRAIN_FILE,
        "test": directory / TEST_FILE,
        "header": directory / HEADER_FILE,
    }
    write_scenes(paths["train"], dataset.train)
    write_scenes(paths["test"], dataset.test)
    header = {
        "format_version": DATASET_FORMAT_VERSION,
        "world": dataset.spec.model_dump(mode="json"),
        "zero_shot_triplet_types": [list(t) for t in dataset.zs_triplet_types],
        "n_train": len(dataset.train),
        "n_test": len(dataset.test),
    }
    paths["header"].write_text(json.dumps(header, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def read_dataset(directory: Path, splits: tuple[str, ...] = ("train", "test")) -> Dataset:
    directory = Path(directory)
    header_path = directory / HEADER_FILE
    if not header_path.exists():
        raise DataError(f"no dataset header at {header_path}; run `synth` first")
    header = json.loads(header_path.read_text(encoding="utf-8"))
    if header.get("format_version") != DATASET_FORMAT_VERSION:
        raise DataError(f"{header_path}: unsupported dataset format {header.get('format_version')!r}")
    try:
        spec = WorldSpec.model_validate(header["world"])
    except ValidationError as exc:
        raise DataError(f"{header_path}: invalid world spec\n{exc}") from exc
    train = read_scenes(directory / TRAIN_FILE) if "train" in splits else []
    test = read_scenes(directory / TEST_FILE) if "test" in splits else []
    return Dataset(
        spec=spec,
        train=train,
        test=test,
        zs_triplet_types=[tuple(t) for t in header["zero_shot_triplet_types"]],
    )


# ============================================================
# STATISTICS
# ============================================================


def dataset_stats(dataset: Dataset, split: Optional[str] = "train") -> dict:
    scenes = dataset.train if split == "train" else dataset.test
    histogram = Counter(edge.predicate for scene in scenes for edge in scene.gt_edges)
    num_predicates = dataset.spec.num_predicates
    n = max(len(scenes), 1)
    return {
        "split": split,
        "scenes": len(scenes),
        "predicate_histogram": [histogram.get(p, 0) for p in range(num_predicates)],
        "mean_nodes": sum(len(s.gt_entities) for s in scenes) / n,
        "mean_edges": sum(len(s.gt_edges) for s in scenes) / n,
        "zero_shot_edges": sum(e.zero_shot for s in scenes for e in s.gt_edges),
        "zero_shot_types": len(dataset.zs_triplet_types),
    }
