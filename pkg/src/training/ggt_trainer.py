"""Teacher-forced training of the graph generative transformer."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence

from langsmith import traceable

from src.autodiff.optim import Adam, OptimizerState
from src.autodiff.tensor import backward
from src.errors import DataError
from src.models.ggt import GraphGenerativeTransformer, build_example, build_model, collate, ggt_loss
from src.scene.generator import simulate_detector
from src.scene.types import Scene
from src.training.common import LossLog, TrainingResult, ensure_finite, epoch_batches
from src.utils.config import GGTConfig, WorldSpec

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("epoch", "L_A", "L_S", "total")


def prepare_examples(scenes: Sequence[Scene], spec: WorldSpec, config: GGTConfig):
    examples = []
    for scene in scenes:
        hypotheses = simulate_detector(scene, spec, config.train_detector_mode)
        if hypotheses:
            examples.append(build_example(scene, hypotheses, config.max_nodes, spec.feature_dim))
    return examples


@traceable(name="train_ggt", tags=["training", "ggt"])
def train_ggt(
    scenes: Sequence[Scene],
    spec: WorldSpec,
    config: GGTConfig,
    seed: int,
    model: Optional[GraphGenerativeTransformer] = None,
    optimizer_state: Optional[OptimizerState] = None,
    start_epoch: int = 0,
    loss_log: Optional[Path] = None,
) -> TrainingResult:
    """
    Train for epochs `start_epoch`..`config.epochs`-1. Passing the model and
    optimizer state of an interrupted run continues it exactly.
    """
    if not scenes:
        raise DataError("cannot train the GGT on an empty dataset")
    examples = prepare_examples(scenes, spec, config)
    if not examples:
        raise DataError("no scene produced any hypotheses to train the GGT on")

    if model is None:
        model = build_model(spec.feature_dim, spec.num_entity_classes, config, seed)
    optimizer = Adam(model.named_parameters(), config.learning_rate, optimizer_state)
    log = LossLog(loss_log, LOSS_COLUMNS)
    history = []

    for epoch in range(start_epoch, config.epochs):
        sums = {"L_A": 0.0, "L_S": 0.0, "total": 0.0}
        batches = 0
        for batch_index, indices in enumerate(epoch_batches(len(examples), config.batch_size, seed, epoch)):
            batch = collate([examples[i] for i in indices], config.max_nodes)
            optimizer.zero_grad()
            rows, logits = model(batch.features, batch.boxes, batch.labels, batch.previous_rows, batch.lengths)
            loss = ggt_loss(rows, logits, batch.target_rows, batch.labels, batch.lengths, config.loss_mix)
            values = {"L_A": loss.adjacency.item(), "L_S": loss.semantic.item(), "total": loss.total.item()}
            ensure_finite(values, epoch + 1, batch_index)
            backward(loss.total)
            optimizer.step()
            for key, value in values.items():
                sums[key] += value
            batches += 1

        row = {"epoch": epoch + 1, **{k: v / batches for k, v in sums.items()}}
        history.append(row)
        log.write(row)
        logger.info(
            "ggt epoch %d/%d  L_A=%.5f  L_S=%.5f  total=%.5f",
            epoch + 1,
            config.epochs,
            row["L_A"],
            row["L_S"],
            row["total"],
        )

    return TrainingResult(
        model=model,
        optimizer=optimizer.state,
        epochs_completed=max(config.epochs, start_epoch),
        history=history,
    )
