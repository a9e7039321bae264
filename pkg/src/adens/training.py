"""Loss math and the SGD training loop with early stopping.

The math functions operate on plain arrays so they can be tested against
independent oracles; the training loop mirrors the same arithmetic through
torch ops (log-softmax, weighted negative log-likelihood with an epsilon
floor) on minibatches.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from adens.errors import (
    DivergedLoss,
    EmptyClass,
    NonFiniteLogits,
    NoTrainingData,
)
from adens.labels import NUM_CLASSES
from adens.models import ModelHandle
from adens.preprocess import PatchSource
from adens.splits import FoldPlan

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
MIN_IMPROVEMENT = 1e-4


def softmax(f) -> np.ndarray:
    """Posteriors p_i = exp(f_i) / sum_j exp(f_j), max-subtracted for overflow."""
    f = np.asarray(f, dtype=np.float64)
    if not np.isfinite(f).all():
        raise NonFiniteLogits(f"logits contain non-finite entries: {f}")
    shifted = f - f.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_one_hot(t: np.ndarray) -> int:
    if t.ndim != 1 or not np.all((t == 0) | (t == 1)) or int(t.sum()) != 1:
        raise ValueError(f"target must be one-hot, got {t}")
    return int(np.argmax(t))


def cross_entropy(p, t, w=None) -> float:
    """Weighted cross-entropy w_c * (-log p_c) at the hot index c.

    The probability is floored at 1e-12 inside the log, so a confidently
    wrong prediction yields a large finite loss rather than
    ZeroProbabilityAtTarget; with unit weights this is the plain
    -sum t_i log(p_i).
    """
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: p {p.shape} vs t {t.shape}")
    hot = _check_one_hot(t)
    if w is None:
        weight = 1.0
    else:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != p.shape or (w <= 0).any():
            raise ValueError(f"weights must be positive with shape {p.shape}, got {w}")
        weight = float(w[hot])
    return weight * -float(np.log(max(float(p[hot]), PROB_FLOOR)))


def loss_gradient(p, t) -> np.ndarray:
    """d(cross_entropy(softmax(f), t))/df = p - t, unit-weight case."""
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: p {p.shape} vs t {t.shape}")
    _check_one_hot(t)
    return p - t


def class_weights(counts) -> np.ndarray:
    """Inverse-frequency weights w_c = N / (m * n_c); balanced counts give ones."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape != (NUM_CLASSES,):
        raise ValueError(f"expected {NUM_CLASSES} counts, got shape {counts.shape}")
    if (counts < 1).any():
        raise EmptyClass(f"every class needs at least one member, got {counts.tolist()}")
    total = counts.sum()
    return total / (NUM_CLASSES * counts)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    class_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        for name in ("batch_size", "max_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.patience < 0:
            raise ValueError(f"patience must be >= 0, got {self.patience}")
        if len(self.class_weights) != NUM_CLASSES or min(self.class_weights) <= 0:
            raise ValueError(f"class_weights must be {NUM_CLASSES} positive reals")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class CheckpointRecord:
    variant_name: str
    fold_index: int
    best_epoch: int
    best_val_loss: float
    history: list[EpochStats] = field(default_factory=list)


def _gather_split(
    data: PatchSource, ids: set[str], purpose: str
) -> tuple[torch.Tensor, torch.Tensor]:
    inputs: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    for subject_id in sorted(ids):
        x, y, _ = data.load(subject_id, purpose)
        if (y < 0).any():
            raise NoTrainingData(f"subject {subject_id} has unlabeled patches")
        inputs.append(x)
        labels.append(y)
    if not inputs:
        raise NoTrainingData(f"no subjects available for purpose {purpose!r}")
    return (
        torch.from_numpy(np.concatenate(inputs)).float(),
        torch.from_numpy(np.concatenate(labels)).long(),
    )


def _weighted_batch_loss(
    logits: torch.Tensor, targets: torch.Tensor, weights: torch.Tensor
) -> torch.Tensor:
    log_p = torch.log_softmax(logits, dim=1).clamp(min=float(np.log(PROB_FLOOR)))
    picked = log_p.gather(1, targets.unsqueeze(1)).squeeze(1)
    return (-picked * weights[targets]).mean()


@torch.no_grad()
def _evaluate_split(
    network: nn.Module,
    x: torch.Tensor,
    y: torch.Tensor,
    weights: torch.Tensor,
    batch_size: int,
) -> tuple[float, float]:
    network.eval()
    losses = []
    correct = 0
    for start in range(0, len(x), batch_size):
        xb = x[start : start + batch_size]
        yb = y[start : start + batch_size]
        logits = network(xb)
        losses.append(float(_weighted_batch_loss(logits, yb, weights)) * len(xb))
        correct += int((logits.argmax(dim=1) == yb).sum())
    return sum(losses) / len(x), correct / len(x)


def train_model(
    model: ModelHandle, fold: FoldPlan, data: PatchSource, cfg: TrainConfig
) -> CheckpointRecord:
    """SGD with momentum over class-weighted cross-entropy, early stopping on
    validation loss; the model is left holding the best-epoch weights."""
    if not fold.train_ids:
        raise NoTrainingData(f"fold {fold.fold_index} has no training subjects")
    x_train, y_train = _gather_split(data, fold.train_ids, "train")
    x_val, y_val = _gather_split(data, fold.val_ids, "val")
    return fit_arrays(model, x_train, y_train, x_val, y_val, cfg, fold.fold_index)


def fit_arrays(
    model: ModelHandle,
    x_train: torch.Tensor,
    y_train: torch.Tensor,
    x_val: torch.Tensor,
    y_val: torch.Tensor,
    cfg: TrainConfig,
    fold_index: int = 0,
) -> CheckpointRecord:
    """The optimization core shared by train_model and the estimator API."""
    if len(x_train) == 0:
        raise NoTrainingData("empty training array")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    weights = torch.tensor(cfg.class_weights, dtype=torch.float32)
    network = model.network
    optimizer = torch.optim.SGD(
        network.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum
    )

    best_state: dict[str, torch.Tensor] | None = None
    best_val = float("inf")
    best_epoch = -1
    stale_epochs = 0
    history: list[EpochStats] = []
    batch_index = 0

    for epoch in range(cfg.max_epochs):
        network.train()
        perm = rng.permutation(len(x_train))
        epoch_loss = 0.0
        for start in range(0, len(perm), cfg.batch_size):
            idx = torch.from_numpy(perm[start : start + cfg.batch_size].copy())
            logits = network(x_train[idx])
            loss = _weighted_batch_loss(logits, y_train[idx], weights)
            if not torch.isfinite(loss):
                raise DivergedLoss(batch_index)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(idx)
            batch_index += 1
        train_loss = epoch_loss / len(x_train)
        val_loss, val_accuracy = _evaluate_split(
            network, x_val, y_val, weights, cfg.batch_size
        )
        history.append(EpochStats(epoch, train_loss, val_loss, val_accuracy))
        logger.info(
            "%s fold %d epoch %d: train %.4f val %.4f acc %.3f",
            model.config.variant_name,
            fold_index,
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        )

        if best_val - val_loss >= MIN_IMPROVEMENT:
            best_val = val_loss
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in network.state_dict().items()}
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= max(cfg.patience, 1):
                break

    if best_state is not None:
        network.load_state_dict(best_state)
    return CheckpointRecord(
        model.config.variant_name, fold_index, best_epoch, best_val, history
    )


def write_history_csv(record: CheckpointRecord, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "val_accuracy"])
        for stats in record.history:
            writer.writerow(
                [stats.epoch, stats.train_loss, stats.val_loss, stats.val_accuracy]
            )
    return path
