"""SGD-with-momentum trainer with linear warmup and linear decay."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .data import Dataset
from .network import Network, backward, forward, softmax

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    momentum: float = 0.9
    peak_lr: float = 0.05
    warmup_epochs: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.peak_lr <= 0 or self.warmup_epochs <= 0:
            raise ValueError("epochs, batch_size, peak_lr and warmup_epochs must be positive")
        if not 0 < self.momentum < 1:
            raise ValueError("momentum must lie in (0, 1)")
        if self.warmup_epochs > self.epochs:
            raise ValueError("warmup_epochs must not exceed epochs")

    def to_dict(self) -> dict:
        return asdict(self)


def learning_rate(step: int, total_steps: int, warmup_steps: int, peak: float) -> float:
    """Linear ramp to ``peak`` over ``warmup_steps``, then linear decay to zero."""
    if step < warmup_steps:
        return peak * (step + 1) / warmup_steps
    remaining = max(total_steps - warmup_steps, 1)
    return peak * max(0.0, 1.0 - (step - warmup_steps) / remaining)


def predict(net: Network, x: np.ndarray, chunk: int = 1024) -> np.ndarray:
    out = []
    for i in range(0, x.shape[0], chunk):
        out.append(forward(net, x[i:i + chunk], need_grad=False).logits)
    return np.concatenate(out)


def accuracy(net: Network, x: np.ndarray, y: np.ndarray) -> float:
    logits = predict(net, x)
    if not np.all(np.isfinite(logits)):
        return float("nan")
    return float(np.mean(np.argmax(logits, axis=1) == y))


@dataclass
class TrainResult:
    accuracy: float
    failed: bool
    epochs_run: int


def train(net: Network, data: Dataset, cfg: TrainConfig) -> tuple[Network, float]:
    """Train in place; returns ``(net, best validation accuracy)``.

    A non-finite loss at any step marks the run failed and its accuracy is
    chance level ``1 / num_classes``.
    """
    net, res = train_detailed(net, data, cfg)
    return net, res.accuracy


def train_detailed(net: Network, data: Dataset, cfg: TrainConfig) -> tuple[Network, TrainResult]:
    rng = np.random.default_rng(cfg.seed)
    chance = 1.0 / data.num_classes
    n = data.x_train.shape[0]
    steps_per_epoch = max(1, n // cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    warmup = steps_per_epoch * cfg.warmup_epochs
    vel_w = [np.zeros_like(w) for w in net.weights]
    vel_b = [None if b is None else np.zeros_like(b) for b in net.biases]
    best = 0.0
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for k in range(steps_per_epoch):
            idx = order[k * cfg.batch_size:(k + 1) * cfg.batch_size]
            xb, yb = data.x_train[idx], data.y_train[idx]
            trace = forward(net, xb)
            probs = softmax(trace.logits)
            with np.errstate(all="ignore"):
                loss = -np.mean(np.log(probs[np.arange(len(yb)), yb]))
            if not np.isfinite(loss):
                log.debug("non-finite loss at epoch %d step %d", epoch, step)
                return net, TrainResult(chance, True, epoch)
            dlogits = probs
            dlogits[np.arange(len(yb)), yb] -= 1.0
            dlogits /= len(yb)
            _, dws, dbs = backward(net, trace, dlogits)
            lr = learning_rate(step, total, warmup, cfg.peak_lr)
            for i in range(len(net.weights)):
                vel_w[i] = cfg.momentum * vel_w[i] + dws[i]
                net.weights[i] -= lr * vel_w[i]
                if vel_b[i] is not None:
                    vel_b[i] = cfg.momentum * vel_b[i] + dbs[i]
                    net.biases[i] -= lr * vel_b[i]
            step += 1
        acc = accuracy(net, data.x_val, data.y_val)
        if not np.isfinite(acc):
            return net, TrainResult(chance, True, epoch + 1)
        best = max(best, acc)
    return net, TrainResult(best, False, cfg.epochs)
