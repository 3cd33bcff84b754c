"""Plain SGD training loop with evenly spaced snapshot checkpoints."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..checkpoint import Checkpoint
from .data import ToyDataset
from .model import ToyModel


class TrainingDivergedError(Exception):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training loss became non-finite at epoch {epoch} ({loss})")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    # The classification head trains with a 10x larger step than the body.
    head_lr_multiplier: float = 10.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.head_lr_multiplier <= 0:
            raise ValueError("head learning-rate multiplier must be positive")


@dataclass
class TrainResult:
    model: ToyModel
    final_loss: float
    snapshots: list[Checkpoint] = field(default_factory=list)


def snapshot_epochs(epochs: int, count: int) -> list[int]:
    """Evenly spaced snapshot epochs, ending at the final epoch."""
    return sorted({max(1, round(epochs * k / count)) for k in range(1, count + 1)})


def train(
    model: ToyModel,
    data: ToyDataset,
    cfg: TrainConfig,
    snapshot_count: int = 0,
) -> TrainResult:
    """SGD on softmax cross-entropy; the input model is left untouched.

    With ``snapshot_count`` > 0 a checkpoint is captured at each of that
    many evenly spaced epochs; the final one doubles as the anchor and is
    flagged as such in its metadata.
    """
    model = model.copy()
    if model.weights[0].shape[1] != data.inputs.shape[1]:
        raise ValueError("model input size does not match the data")
    if model.weights[-1].shape[0] != data.classes:
        raise ValueError("model output size does not match the class count")
    if snapshot_count and cfg.epochs < 1:
        raise ValueError("snapshots need at least one epoch")

    marks = set(snapshot_epochs(cfg.epochs, snapshot_count)) if snapshot_count else set()
    rng = np.random.default_rng(cfg.seed)
    head = model.depth - 1
    snapshots: list[Checkpoint] = []

    # Diverged runs overflow before the loss check can trip; keep the noise
    # out of the warning stream and report the epoch instead.
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(data.size)
            for start in range(0, data.size, cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                loss, grads_w, grads_b = model.loss_and_grads(
                    data.inputs[batch], data.labels[batch]
                )
                if not np.isfinite(loss):
                    raise TrainingDivergedError(epoch, loss)
                for i in range(model.depth):
                    lr = cfg.learning_rate * (cfg.head_lr_multiplier if i == head else 1.0)
                    model.weights[i] -= lr * grads_w[i]
                    model.biases[i] -= lr * grads_b[i]
            if epoch in marks:
                meta = {"model_id": f"epoch{epoch}", "epoch": str(epoch)}
                if epoch == max(marks):
                    meta["anchor"] = "1"
                snapshots.append(model.to_checkpoint(meta))

        final_loss = model.loss(data.inputs, data.labels)
    if not np.isfinite(final_loss):
        raise TrainingDivergedError(cfg.epochs, final_loss)
    return TrainResult(model=model, final_loss=final_loss, snapshots=snapshots)
