"""Data splitting, Adam, and the early-stopping training loop."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import backward, no_grad
from .errors import ContractError, DataError, TrainingError

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    task: str = "classification"
    train_frac: float = 0.8
    val_frac_of_train: float = 0.1

    def __post_init__(self):
        for name in ("train_frac", "val_frac_of_train"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ContractError(f"{name} must be in (0, 1), got {value}")
        if self.patience < 1:
            raise ContractError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ContractError("batch_size and max_epochs must be positive")
        if self.task not in ("classification", "forecasting"):
            raise ContractError(f"unknown task {self.task!r}")

    def to_dict(self):
        return asdict(self)


def split(n_rows, config, timestamps=None):
    """Index arrays (train, val, test).

    With ``timestamps`` the split is contiguous in time (train earliest, test
    latest); otherwise rows are shuffled with ``config.seed``. Validation rows
    are the tail of the training block.
    """
    if timestamps is not None:
        order = np.argsort(np.asarray(timestamps), kind="stable")
        if len(order) != n_rows:
            raise DataError(f"{len(order)} timestamps for {n_rows} rows")
    else:
        order = np.random.default_rng(config.seed).permutation(n_rows)
    n_fit = int(round(n_rows * config.train_frac))
    n_val = int(round(n_fit * config.val_frac_of_train))
    n_train = n_fit - n_val
    if n_train < 1 or n_val < 1 or n_rows - n_fit < 1:
        raise DataError(f"{n_rows} rows are too few for a train/val/test split")
    return order[:n_train], order[n_train:n_fit], order[n_fit:]


def take(data, idx):
    return {k: (v[idx] if isinstance(v, np.ndarray) else v) for k, v in data.items()}


def n_rows(data):
    return len(next(v for v in data.values() if isinstance(v, np.ndarray)))


def adam_step(params, grads, state, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """One bias-corrected Adam update of ``{name: ndarray}`` params in place.

    ``state`` holds ``m``, ``v`` dicts and the step counter ``t``; it is
    created on first use.
    """
    state.setdefault("t", 0)
    state.setdefault("m", {})
    state.setdefault("v", {})
    state["t"] += 1
    t = state["t"]
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, param {p.shape}")
        m = state["m"].get(name)
        v = state["v"].get(name)
        if m is None:
            m, v = np.zeros_like(p), np.zeros_like(p)
        elif m.shape != p.shape:
            raise ContractError(f"optimizer state for {name} has shape {m.shape}, param {p.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state["m"][name], state["v"][name] = m, v
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    stopped_epoch: int = 0

    def to_dict(self):
        return asdict(self)


def evaluate_loss(model, data, batch_size=256):
    total, count = 0.0, n_rows(data)
    with no_grad():
        for start in range(0, count, batch_size):
            idx = np.arange(start, min(count, start + batch_size))
            total += model.loss(take(data, idx)).item() * len(idx)
    return total / count


def train(model, train_data, val_data, config):
    """Fit ``model`` in place with Adam and early stopping on validation loss.

    Epochs are 1-based in the returned history. The parameters of the best
    validation epoch are restored before returning.
    """
    if n_rows(train_data) == 0 or n_rows(val_data) == 0:
        raise DataError("train and validation splits must be non-empty")
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    state = {}
    history = History()
    best = model.state_arrays()
    stale = 0
    n = n_rows(train_data)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            for p in params.values():
                p.grad = None
            loss = model.loss(take(train_data, idx), rng)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite training loss at epoch {epoch}", epoch=epoch)
            backward(loss)
            adam_step({k: p.data for k, p in params.items()},
                      {k: p.grad for k, p in params.items() if p.grad is not None},
                      state, config.learning_rate)
            running += value * len(idx)
        val = evaluate_loss(model, val_data)
        if not np.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}", epoch=epoch)
        history.train_loss.append(running / n)
        history.val_loss.append(val)
        history.stopped_epoch = epoch
        log.debug("epoch %d train %.5f val %.5f", epoch, running / n, val)
        if val < history.best_val_loss:
            history.best_val_loss, history.best_epoch = val, epoch
            best = model.state_arrays()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_state_arrays(best)
    return history
