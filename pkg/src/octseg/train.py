"""Training loop: SGD with Nesterov momentum, plateau-halving learning
rate, best-validation checkpointing, deterministic history logging.

Batches are single images (the network normalizes with per-image batch
statistics during training).  Each epoch shuffles the training set with a
seeded permutation, augments every sample online with a per-(seed, sample,
epoch) key, and then measures the validation loss in inference mode with
augmentation off.  The learning rate halves whenever the validation loss
fails to improve for two consecutive epochs, and the checkpoint with the
best validation loss is kept.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .augment import AugmentConfig, augment_sample
from .autodiff import Tape, Variable
from .checkpoint import save_checkpoint
from .determinism import single_threaded
from .losses import jaccard_loss, one_hot
from .model import DilatedResidualUNet


class TrainingDiverged(RuntimeError):
    """A non-finite loss or gradient appeared; the run was aborted."""


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    plateau_patience: int = 2
    lr_halving_factor: float = 0.5
    epochs: int = 100
    batch_size: int = 1
    seed: int = 0
    improvement_delta: float = 1e-6
    lr_floor: float = 1e-4          # stop early once lr drops below; 0 disables
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    checkpoint_dir: str = "runs/default"
    single_thread: bool = False

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be at least 1")
        if self.batch_size != 1:
            raise ValueError("only batch_size=1 is supported")
        if not (0.0 < self.lr_halving_factor < 1.0):
            raise ValueError("lr_halving_factor must be in (0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")


@dataclass
class TrainState:
    velocities: dict[str, np.ndarray]
    lr: float
    epoch: int = 0
    best_val: float = math.inf
    best_epoch: int = -1
    streak: int = 0
    seed: int = 0

    @classmethod
    def for_model(cls, model: DilatedResidualUNet,
                  config: TrainConfig) -> "TrainState":
        vel = {name: np.zeros_like(p.value)
               for name, p in model.parameters().items()}
        return cls(velocities=vel, lr=config.lr0, seed=config.seed)


def sgd_nesterov_step(params: dict[str, Variable], state: TrainState,
                      lr: float, momentum: float = 0.9) -> None:
    """v <- mu*v - lr*g;  theta <- theta + mu*v - lr*g;  grads zeroed after."""
    for name, p in params.items():
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in {name}")
        v = state.velocities[name]
        v *= momentum
        v -= lr * g
        p.value += momentum * v
        p.value -= lr * g
    ad.zero_grads(params)


def lr_schedule_step(state: TrainState, val_loss: float,
                     config: TrainConfig) -> float:
    """Plateau rule: an epoch improves if val_loss < best - delta; after
    `plateau_patience` consecutive non-improving epochs the lr halves and
    the streak resets."""
    if val_loss < state.best_val - config.improvement_delta:
        state.best_val = val_loss
        state.best_epoch = state.epoch
        state.streak = 0
    else:
        state.streak += 1
        if state.streak >= config.plateau_patience:
            state.lr *= config.lr_halving_factor
            state.streak = 0
    return state.lr


@dataclass
class TrainResult:
    best_checkpoint: Path
    history_path: Path
    history: list[str]
    best_val: float
    best_epoch: int
    epochs_run: int


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x0DD5,
                                                        int(epoch))))
    return rng.permutation(n)


def validation_loss(model: DilatedResidualUNet, val_set) -> float:
    losses = []
    n_classes = model.config.n_classes
    for s in val_set:
        probs = model.forward(s.image[None, None], mode="infer")
        losses.append(jaccard_loss(
            probs, one_hot(s.labels, n_classes, dtype=probs.value.dtype)).item())
    return float(np.mean(losses))


def train_step(model: DilatedResidualUNet, sample, params, state: TrainState,
               config: TrainConfig) -> float:
    x = sample.image[None, None].astype(model.dtype)
    truth = one_hot(sample.labels, model.config.n_classes, dtype=model.dtype)
    with Tape() as tape:
        probs = model.forward(x, mode="train")
        loss = jaccard_loss(probs, truth)
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingDiverged(
            f"non-finite training loss on sample {sample.id}")
    tape.backward(loss)
    sgd_nesterov_step(params, state, state.lr, config.momentum)
    return value


def train(model: DilatedResidualUNet, train_set, val_set,
          config: TrainConfig) -> TrainResult:
    train_set, val_set = list(train_set), list(val_set)
    if not train_set or not val_set:
        raise ValueError("training and validation sets must be non-empty")
    train_ids = {s.id for s in train_set}
    val_ids = {s.id for s in val_set}
    if len(train_set) > 1 and train_ids & val_ids:
        raise ValueError(
            f"train/val sets overlap: {sorted(train_ids & val_ids)[:3]}")

    ckpt_dir = Path(config.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    best_path = ckpt_dir / "best.ckpt"
    history_path = ckpt_dir / "history.txt"

    params = model.parameters()
    state = TrainState.for_model(model, config)
    ad.zero_grads(params)
    history: list[str] = []
    guard = single_threaded() if config.single_thread \
        else contextlib.nullcontext()

    with guard, history_path.open("w") as hist:
        for epoch in range(1, config.epochs + 1):
            state.epoch = epoch
            lr_used = state.lr
            order = _epoch_order(config.seed, epoch, len(train_set))
            epoch_losses = []
            for idx in order:
                sample = train_set[idx]
                aug = augment_sample(sample, config.augment,
                                     (config.seed, sample.id, epoch))
                epoch_losses.append(
                    train_step(model, aug, params, state, config))
            train_loss = float(np.mean(epoch_losses))
            val_loss = validation_loss(model, val_set)

            improved = val_loss < state.best_val - config.improvement_delta
            if improved:
                save_checkpoint(model, best_path)
            lr_schedule_step(state, val_loss, config)

            line = (f"{epoch}\t{lr_used:.17g}\t{train_loss:.17g}\t"
                    f"{val_loss:.17g}\t{1 if improved else 0}")
            history.append(line)
            hist.write(line + "\n")
            hist.flush()
            if config.lr_floor > 0 and state.lr < config.lr_floor:
                break

    if not best_path.exists():  # no epoch improved on +inf: cannot happen,
        save_checkpoint(model, best_path)  # but keep the contract anyway
    return TrainResult(best_checkpoint=best_path, history_path=history_path,
                       history=history, best_val=state.best_val,
                       best_epoch=state.best_epoch, epochs_run=state.epoch)
