"""Optimization loop: pretraining, fine-tuning, and single-month inference.

The loop minimizes mean squared error on normalized targets, evaluates the
validation set after every epoch, keeps the epoch with the lowest validation
error, and stops early once validation fails to improve for a fixed number
of epochs.  Epoch 0 is an evaluation-only pass over the initial parameters,
so a fine-tuning run can never end up worse than its starting checkpoint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DimensionError,
    DivergenceError,
    InsufficientHistoryError,
    ValidationError,
)
from .grid import GridSeries, MonthStamp
from .model import Model
from .nn import Adam, backward, mse_loss, no_grad, step_lr
from .stacking import SampleSet, assemble_sample, case_by_id, offsets

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    weight_decay: float = 1e-3
    epochs: int = 40
    batch_size: int = 16
    scheduler_step_epochs: int = 10
    scheduler_factor: float = 0.1
    early_stop_patience: int | None = 5  # None disables early stopping
    seed: int = 0
    shuffle: bool = True

    def validate(self):
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValidationError("learning_rate must be > 0 and weight_decay >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("epochs must be >= 0 and batch_size >= 1")
        if self.scheduler_step_epochs < 1 or not 0 < self.scheduler_factor <= 1:
            raise ValidationError("scheduler needs step >= 1 and factor in (0, 1]")
        if self.early_stop_patience is not None:
            if self.early_stop_patience < 1:
                raise ValidationError("early_stop_patience must be >= 1 or None")
            if self.early_stop_patience > self.epochs > 0:
                raise ValidationError("early_stop_patience cannot exceed epochs")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "scheduler_step_epochs": self.scheduler_step_epochs,
            "scheduler_factor": self.scheduler_factor,
            "early_stop_patience": self.early_stop_patience,
            "seed": self.seed,
            "shuffle": self.shuffle,
        }


@dataclass
class TrainHistory:
    """Per-epoch record; epoch 0 is the pre-training evaluation."""

    epochs: list = field(default_factory=list)
    learning_rate: list = field(default_factory=list)
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    best_epoch: int = 0
    best_validation_loss: float = float("nan")
    stopped_early: bool = False

    def record(self, epoch, lr, train, val):
        self.epochs.append(epoch)
        self.learning_rate.append(lr)
        self.train_mse.append(train)
        self.val_mse.append(val)

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "train_mse": self.train_mse,
            "val_mse": self.val_mse,
            "best_epoch": self.best_epoch,
            "best_validation_loss": self.best_validation_loss,
            "stopped_early": self.stopped_early,
        }


class EarlyStopper:
    """Stop once the monitored loss fails to improve for ``patience`` updates."""

    def __init__(self, patience: int | None):
        self.patience = patience
        self.best = float("inf")
        self.best_index = -1
        self.count = 0

    def update(self, index: int, value: float) -> bool:
        """Feed the next loss value; returns True when training should stop."""
        self.count += 1
        if value < self.best:
            self.best = value
            self.best_index = index
        if self.patience is None:
            return False
        return index - self.best_index >= self.patience


def _normalized_targets(sample_set: SampleSet, model: Model) -> np.ndarray:
    stats = model.cfg.norm_stats
    return ((sample_set.targets() - stats.mean) / stats.std).astype(np.float32)


def _batch_mse(model: Model, inputs, targets, batch_size) -> float:
    """Eval-mode MSE over a whole set, accumulated exactly in float64."""
    sse = 0.0
    with no_grad():
        for lo in range(0, len(inputs), batch_size):
            x = inputs[lo : lo + batch_size]
            t = targets[lo : lo + batch_size]
            pred = model.forward(x, training=False).data
            d = pred.astype(np.float64) - t.astype(np.float64)
            sse += float(np.sum(d * d))
    return sse / targets.size


def train(
    model: Model,
    train_set: SampleSet,
    val_set: SampleSet,
    cfg: TrainConfig,
    log=None,
) -> TrainHistory:
    """Optimize the model in place; on return it holds the best-epoch state.

    ``log`` is called with one formatted line per epoch (defaults to the
    module logger).
    """
    cfg.validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValidationError("training and validation sets must be nonempty")
    for name, sset in (("train", train_set), ("validation", val_set)):
        if sset.n_channels != model.cfg.in_channels:
            raise DimensionError(
                f"{name} samples have {sset.n_channels} channels, model expects "
                f"{model.cfg.in_channels}"
            )
    emit = log if log is not None else (lambda line: logger.info(line))

    train_x = train_set.inputs()
    train_y = _normalized_targets(train_set, model)
    val_x = val_set.inputs()
    val_y = _normalized_targets(val_set, model)

    optimizer = Adam(
        model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
    )
    rng = np.random.default_rng(cfg.seed)
    stopper = EarlyStopper(cfg.early_stop_patience)
    history = TrainHistory()

    # epoch 0: evaluate the starting point; a fresh model first needs one
    # statistics-gathering pass to give its batchnorms running estimates
    if not model.bn_initialized:
        n = len(train_x)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            with no_grad():
                out = model.forward(train_x[lo : lo + cfg.batch_size], training=True)
            d = out.data.astype(np.float64) - train_y[lo : lo + cfg.batch_size]
            losses.append(np.sum(d * d))
        train_mse0 = float(np.sum(losses) / train_y.size)
    else:
        train_mse0 = _batch_mse(model, train_x, train_y, cfg.batch_size)
    val_mse0 = _batch_mse(model, val_x, val_y, cfg.batch_size)
    history.record(0, cfg.learning_rate, train_mse0, val_mse0)
    stopper.update(0, val_mse0)
    best_state = model.get_state()
    emit(f"epoch=0 lr={cfg.learning_rate:.3e} train_mse={train_mse0:.6f} val_mse={val_mse0:.6f}")

    n = len(train_x)
    order = np.arange(n)
    for epoch in range(1, cfg.epochs + 1):
        lr = step_lr(cfg.learning_rate, epoch - 1, cfg.scheduler_step_epochs, cfg.scheduler_factor)
        optimizer.lr = lr
        if cfg.shuffle:
            order = rng.permutation(n)
        sq_sum = 0.0
        for step, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo : lo + cfg.batch_size]
            optimizer.zero_grad()
            out = model.forward(train_x[idx], training=True)
            loss = mse_loss(out, train_y[idx])
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise DivergenceError(
                    f"non-finite training loss at epoch {epoch}, step {step}"
                )
            backward(loss)
            optimizer.step()
            sq_sum += loss_val * idx.size
        train_mse = sq_sum / n
        val_mse = _batch_mse(model, val_x, val_y, cfg.batch_size)
        if not np.isfinite(val_mse):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        history.record(epoch, lr, train_mse, val_mse)
        emit(f"epoch={epoch} lr={lr:.3e} train_mse={train_mse:.6f} val_mse={val_mse:.6f}")
        should_stop = stopper.update(epoch, val_mse)
        if stopper.best_index == epoch:
            best_state = model.get_state()
        if should_stop:
            history.stopped_early = True
            emit(f"early stop at epoch {epoch}; best epoch {stopper.best_index}")
            break

    history.best_epoch = stopper.best_index
    history.best_validation_loss = stopper.best
    model.set_state(best_state)
    return history


def finetune(
    model: Model,
    train_set: SampleSet,
    val_set: SampleSet,
    cfg: TrainConfig,
    log=None,
) -> TrainHistory:
    """Same loop as :func:`train`, starting from a restored checkpoint.

    Normalization statistics stay frozen (samples must have been assembled
    with the checkpoint's stats); the sample case must match the checkpoint.
    """
    for name, sset in (("train", train_set), ("validation", val_set)):
        if sset.case.id != model.cfg.case_id:
            raise ConfigurationError(
                f"{name} samples use case {sset.case.id!r}, checkpoint was built "
                f"for {model.cfg.case_id!r}"
            )
        if sset.with_elevation != model.cfg.elevation:
            raise ConfigurationError(
                f"{name} samples were assembled with elevation={sset.with_elevation}, "
                f"checkpoint expects elevation={model.cfg.elevation}"
            )
    return train(model, train_set, val_set, cfg, log=log)


def predict(
    model: Model,
    series: GridSeries,
    elevation,
    target_stamp: MonthStamp,
) -> np.ndarray:
    """Forecast one month in degrees Celsius from the series' own history."""
    case = case_by_id(model.cfg.case_id)
    if model.cfg.elevation and elevation is None:
        raise ConfigurationError("checkpoint expects an elevation channel; none given")
    if not model.cfg.elevation:
        elevation = None
    target_index = series.index_of(target_stamp)
    if target_index < offsets(case)[-1]:
        raise InsufficientHistoryError(
            f"case {case.id} needs {offsets(case)[-1]} months before {target_stamp}, "
            f"series starts {series.start}"
        )
    sample = assemble_sample(series, elevation, model.cfg.norm_stats, case, target_index)
    with no_grad():
        out = model.forward(sample.input[None], training=False).data[0, 0]
    stats = model.cfg.norm_stats
    return (out.astype(np.float64) * stats.std + stats.mean).astype(np.float32)
