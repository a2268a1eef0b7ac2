"""Loss, optimizer, schedule, training loop and evaluation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import (NonFiniteError, Tensor, abs_, add, backward, mean, mul, no_grad,
                     square, sub, tanh)

__all__ = [
    "MixtureLossReport", "mixture_loss", "l2_loss", "cosine_lr", "Adam", "TrainState",
    "TrainConfig", "TrainResult", "TrainingDiverged", "clip_grad_norm", "train_loop",
    "Metrics", "evaluate", "evaluate_predictor", "persistence_forecast", "write_history",
]

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class MixtureLossReport:
    loss: Tensor
    mean_alpha: float
    l1_component: float
    l2_component: float

    @property
    def total(self) -> float:
        return self.loss.item()


def _check_pair(pred: Tensor, target: Tensor):
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from target shape {target.shape}")
    if not (np.all(np.isfinite(pred.data)) and np.all(np.isfinite(target.data))):
        raise NonFiniteError("loss inputs contain NaN or Inf")


def mixture_loss(pred: Tensor, target) -> MixtureLossReport:
    """Mean over elements of a*|e| + (1-a)*e**2 with a = tanh(|e|), e = pred - target.

    The weight ``a`` stays in the graph, so gradients include its dependence on e.
    """
    target = target if isinstance(target, Tensor) else Tensor(target)
    _check_pair(pred, target)
    e = sub(pred, target)
    a = abs_(e)
    alpha = tanh(a)
    l1 = mul(alpha, a)
    l2 = mul(sub(Tensor(1.0), alpha), square(e))
    total = mean(add(l1, l2))
    return MixtureLossReport(total, float(alpha.data.mean()), float(l1.data.mean()), float(l2.data.mean()))


def l2_loss(pred: Tensor, target) -> MixtureLossReport:
    target = target if isinstance(target, Tensor) else Tensor(target)
    _check_pair(pred, target)
    total = mean(square(sub(pred, target)))
    return MixtureLossReport(total, 0.0, 0.0, total.item())


LOSSES = {"mixture": mixture_loss, "l2": l2_loss}


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class TrainState:
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    base_lr: float = 5e-4
    total_steps: int = 1
    best_val: float = math.inf
    epochs_since_improvement: int = 0
    seed: int = 0


class Adam:
    """Bias-corrected Adam over named parameters; moments live in a TrainState."""

    def __init__(self, named_params, state: TrainState, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(named_params)
        self.state = state
        self.beta1, self.beta2 = betas
        self.eps = eps
        for name, p in self.params:
            state.first_moment.setdefault(name, np.zeros(p.shape))
            state.second_moment.setdefault(name, np.zeros(p.shape))

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self, lr: float):
        for name, p in self.params:
            if p.grad is None:
                raise ValueError(f"parameter {name} has no gradient")
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient for {name}; step aborted")
        st = self.state
        st.step += 1
        t = st.step
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params:
            m = st.first_moment[name]
            v = st.second_moment[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None))
    if total > max_norm:
        k = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * k
    return total


@dataclass
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 128
    epochs: int = 50
    patience: int = 10
    seed: int = 2024
    loss: str = "mixture"
    clip: float | None = 5.0

    def validate(self):
        if self.loss not in LOSSES:
            raise ValueError(f"training.loss must be one of {'|'.join(LOSSES)}, got {self.loss!r}")
        if self.lr < 0:
            raise ValueError(f"training.lr must be >= 0, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ValueError("training.batch_size, training.epochs and training.patience must be >= 1")
        if self.clip is not None and self.clip <= 0:
            raise ValueError(f"training.clip must be positive or null, got {self.clip}")
        return self


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    history: list[dict]
    best_epoch: int
    state: TrainState


def _batches(n, batch_size, order=None):
    idx = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield idx[start:start + batch_size]


def _criterion_value(model, data, loss_fn, batch_size) -> float:
    total, count = 0.0, 0
    with no_grad():
        for b in _batches(len(data), batch_size):
            pred = model.forward(Tensor(data.inputs[b]))
            rep = loss_fn(pred, Tensor(data.targets[b]))
            total += rep.total * pred.size
            count += pred.size
    return total / count


def train_loop(model, train, val, config: TrainConfig) -> TrainResult:
    """Mini-batch Adam with per-batch cosine decay and patience-based early stopping.

    The model ends up holding the parameters of the best validation epoch.
    """
    config.validate()
    if len(train) == 0 or len(val) == 0:
        raise ValueError("training and validation sets must be non-empty")
    loss_fn = LOSSES[config.loss]
    rng = np.random.default_rng(config.seed)
    per_epoch = math.ceil(len(train) / config.batch_size)
    state = TrainState(base_lr=config.lr, total_steps=config.epochs * per_epoch, seed=config.seed)
    named = model.named_parameters()
    params = [p for _, p in named]
    opt = Adam(named, state)
    history = []
    best_state, best_epoch = model.state_dict(), 0
    for epoch in range(1, config.epochs + 1):
        lr_epoch = cosine_lr(state.step, state.total_steps, config.lr)
        order = rng.permutation(len(train))
        run_total, run_count = 0.0, 0
        for b in _batches(len(train), config.batch_size, order):
            opt.zero_grad()
            try:
                pred = model.forward(Tensor(train.inputs[b]))
                rep = loss_fn(pred, Tensor(train.targets[b]))
                backward(rep.loss)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"non-finite values at epoch {epoch}, step {state.step}: {exc}") from exc
            if config.clip is not None:
                clip_grad_norm(params, config.clip)
            opt.step(cosine_lr(state.step, state.total_steps, config.lr))
            run_total += rep.total * len(b)
            run_count += len(b)
        train_loss = run_total / run_count
        try:
            val_loss = _criterion_value(model, val, loss_fn, config.batch_size)
        except NonFiniteError as exc:
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}: {exc}") from exc
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": lr_epoch})
        log.info("epoch %d train %.6f val %.6f lr %.3g", epoch, train_loss, val_loss, lr_epoch)
        if val_loss < state.best_val:
            state.best_val = val_loss
            state.epochs_since_improvement = 0
            best_state, best_epoch = model.state_dict(), epoch
        else:
            state.epochs_since_improvement += 1
            if state.epochs_since_improvement >= config.patience:
                log.info("early stopping after epoch %d", epoch)
                break
    model.load_state_dict(best_state)
    return TrainResult(best_state, history, best_epoch, state)


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for row in history:
            w.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_loss"]), repr(row["lr"])])


@dataclass
class Metrics:
    mse: float
    mae: float
    n_windows: int
    mse_per_step: np.ndarray
    mae_per_step: np.ndarray

    def __iter__(self):
        return iter((self.mse, self.mae))


def evaluate_predictor(predict, data, batch_size: int = 128) -> Metrics:
    """MSE/MAE of ``predict(inputs) -> forecasts`` over every window, tail batch included."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    T = data.targets.shape[-1]
    sq, ab = np.zeros(T), np.zeros(T)
    seen = 0
    for b in _batches(len(data), batch_size):
        pred = np.asarray(predict(data.inputs[b]))
        err = pred - data.targets[b]
        sq += np.sum(err * err, axis=(0, 1))
        ab += np.sum(np.abs(err), axis=(0, 1))
        seen += len(b)
    assert seen == len(data)
    per = seen * data.targets.shape[1]
    return Metrics(float(sq.sum() / (per * T)), float(ab.sum() / (per * T)), seen, sq / per, ab / per)


def evaluate(model, data, batch_size: int = 128) -> Metrics:
    def predict(x):
        with no_grad():
            return model.forward(Tensor(x)).data

    return evaluate_predictor(predict, data, batch_size)


def persistence_forecast(inputs: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the last observed value of each channel for every future step."""
    return np.repeat(inputs[..., -1:], horizon, axis=-1)
