"""Training and evaluation loops.

Training minimizes mean-squared error in normalized (scale) units; the
recorded MAE history and all reported metrics are in raw density units so
runs remain comparable across normalizations. Determinism is the default:
a fixed seed fixes initialization, shuffling, and dropout.
"""

from __future__ import annotations

import copy
import random
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import optim

from . import metrics
from .data import FlowDataset, SplitData, normalized_inputs
from .errors import ConfigError, EmptyTestSet
from .model import Forecaster

OPTIMIZERS = {
    "sgd": optim.SGD,
    "adadelta": optim.Adadelta,
    "rmsprop": optim.RMSprop,
    "adagrad": optim.Adagrad,
    "adam": optim.Adam,
}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    optimizer: str = "adam"
    patience: int = 10
    min_delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {sorted(OPTIMIZERS)}")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    baseline_val_mae: float = 0.0
    best_val_mae: float = 0.0
    best_epoch: int = 0
    stopped_early: bool = False


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def make_optimizer(name: str, params, learning_rate: float):
    try:
        cls = OPTIMIZERS[name]
    except KeyError:
        raise ConfigError(f"optimizer must be one of {sorted(OPTIMIZERS)}") from None
    return cls(params, lr=learning_rate)


def _tensors(split: SplitData, scales: np.ndarray) -> dict[str, torch.Tensor]:
    arrays = normalized_inputs(split, scales)
    return {name: torch.from_numpy(arr) for name, arr in arrays.items()}


def _predict(model: Forecaster, tensors: dict, batch_size: int = 256) -> np.ndarray:
    """Raw-scale predictions over a whole split, batched."""
    model.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, tensors["current"].shape[0], batch_size):
            sl = slice(start, start + batch_size)
            outputs.append(
                model(tensors["current"][sl], tensors["daily"][sl], tensors["weekly"][sl])
            )
    return torch.cat(outputs).numpy()


def split_mae(model: Forecaster, tensors: dict) -> float:
    """Raw-scale MAE over all horizons of one split."""
    return metrics.mae(_predict(model, tensors), tensors["labels"].numpy())


def train_model(model: Forecaster, dataset: FlowDataset, cfg: TrainConfig) -> TrainResult:
    """Fits the model on the train split, early-stopping on validation MAE.

    The model is left holding the best-validation weights. The result's
    baseline is the untrained model's validation MAE, so improvement is
    measurable without retraining.
    """
    seed_everything(cfg.seed)
    model.set_scales(dataset.scales)
    train = _tensors(dataset.splits["train"], dataset.scales)
    val = _tensors(dataset.splits["val"], dataset.scales)
    n_train = train["current"].shape[0]
    if n_train == 0:
        raise EmptyTestSet("train split is empty")

    optimizer = make_optimizer(cfg.optimizer, model.parameters(), model.cfg.learning_rate)
    loss_fn = torch.nn.MSELoss()
    result = TrainResult()
    result.baseline_val_mae = split_mae(model, val)
    best = result.baseline_val_mae
    best_state = copy.deepcopy(model.state_dict())
    stale = 0

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = torch.randperm(n_train)
        epoch_loss = 0.0
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            optimizer.zero_grad()
            pred = model.forward_normalized(
                train["current"][idx], train["daily"][idx], train["weekly"][idx]
            )
            loss = loss_fn(pred, train["targets"][idx])
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(idx)
        train_mae = split_mae(model, train)
        val_mae = split_mae(model, val)
        result.history.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss / n_train,
                "train_mae": train_mae,
                "val_mae": val_mae,
            }
        )
        if val_mae < best - cfg.min_delta:
            best, stale = val_mae, 0
            result.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        else:
            stale += 1
            if stale >= cfg.patience:
                result.stopped_early = True
                break

    model.load_state_dict(best_state)
    result.best_val_mae = best
    return result


def evaluate_split(model: Forecaster, dataset: FlowDataset, split_name: str) -> dict:
    """Per-horizon raw-scale metrics: {horizon: {mae, mape, rmse, ...}}."""
    split = dataset.splits[split_name]
    if len(split) == 0:
        raise EmptyTestSet(f"{split_name} split is empty")
    tensors = _tensors(split, dataset.scales)
    predictions = _predict(model, tensors)
    truth = split.labels
    return {
        str(h): metrics.score(predictions[:, i], truth[:, i])
        for i, h in enumerate(dataset.horizons)
    }
