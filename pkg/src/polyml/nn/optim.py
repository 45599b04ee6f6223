"""Optimizers, gradient clipping, initialization and the shared training loop."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import TrainingDivergedError
from ..numeric import make_rng
from .autograd import value_and_grad


@dataclass
class TrainConfig:
    """Hyperparameters for gradient training.

    ``batch_size=None`` means full batch. ``clip`` is a global-norm threshold.
    """

    lr: float = 0.01
    momentum: float = 0.0
    weight_decay: float = 0.0
    dropout: float = 0.0
    clip: float | None = None
    optimizer: str = "sgd"  # sgd | momentum | adam
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int | None = None
    epochs: int = 100
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if not 0 <= self.momentum <= 1:
            raise ValueError("momentum must be in [0, 1]")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be >= 0")
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must be in [0, 1)")
        if self.clip is not None and not self.clip > 0:
            raise ValueError("clip threshold must be > 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class FitReport:
    loss_history: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    seed: int = 0
    epochs_run: int = 0
    converged: bool = False


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_update(state: AdamState, params: dict, grads: dict, config: TrainConfig) -> AdamState:
    """One bias-corrected Adam step, applied to ``params`` in place."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    for k, g in grads.items():
        m = state.m.get(k, 0.0) * b1 + (1 - b1) * g
        v = state.v.get(k, 0.0) * b2 + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        m_hat = m / (1 - b1**state.t)
        v_hat = v / (1 - b2**state.t)
        params[k] -= config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return state


class Optimizer:
    """Stateful wrapper dispatching on ``config.optimizer``."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.adam = AdamState()
        self.velocity: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        c = self.config
        if c.optimizer == "adam":
            adam_update(self.adam, params, grads, c)
            return
        for k, g in grads.items():
            delta = -c.lr * g
            if c.optimizer == "momentum":
                delta = delta + c.momentum * self.velocity.get(k, 0.0)
                self.velocity[k] = delta
            params[k] += delta


def global_norm(grads) -> float:
    if isinstance(grads, dict):
        return float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
    return float(np.linalg.norm(np.ravel(grads)))


def clip_gradient(g, c: float):
    """Rescale so the (global) norm is at most ``c``; dicts are clipped jointly."""
    if not c > 0:
        raise ValueError("clip threshold must be > 0")
    norm = global_norm(g)
    if norm <= c:
        return g
    scale = c / norm
    if isinstance(g, dict):
        return {k: v * scale for k, v in g.items()}
    return np.asarray(g, dtype=float) * scale


def glorot_init(fan_in: int, fan_out: int, rng) -> np.ndarray:
    """Normal draws with variance 2 / (fan_in + fan_out)."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fans must be >= 1")
    sd = np.sqrt(2.0 / (fan_in + fan_out))
    return make_rng(rng).normal(0.0, sd, size=(fan_in, fan_out))


def add_weight_decay(params: dict, grads: dict, lam: float) -> dict:
    """Gradient of ``lam * sum(w^2)`` over weight matrices (ndim >= 2)."""
    if lam == 0:
        return grads
    return {k: g + 2.0 * lam * params[k] if params[k].ndim >= 2 else g for k, g in grads.items()}


def train_loop(params: dict, loss_fn: Callable, X, Y, config: TrainConfig,
               callback: Callable | None = None) -> FitReport:
    """Mini-batch training shared by every network type.

    ``loss_fn(tensor_params, Xb, Yb, rng)`` returns a scalar Tensor. The loss
    recorded per epoch is the mean of the batch losses seen in that epoch
    (for full batch, the loss before the epoch's update).
    """
    rng = make_rng(config.seed)
    n = len(X)
    bs = n if config.batch_size is None else min(config.batch_size, n)
    opt = Optimizer(config)
    report = FitReport(seed=config.seed)
    for epoch in range(config.epochs):
        order = rng.permutation(n) if (config.shuffle and bs < n) else np.arange(n)
        losses = []
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            loss, grads = value_and_grad(loss_fn, params, X[idx], Y[idx], rng)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"loss became {loss} at epoch {epoch}")
            grads = add_weight_decay(params, grads, config.weight_decay)
            if config.clip is not None:
                grads = clip_gradient(grads, config.clip)
            opt.step(params, grads)
            losses.append(loss)
        report.loss_history.append(float(np.mean(losses)))
        report.epochs_run = epoch + 1
        if callback is not None and callback(epoch, report):
            report.converged = True
            break
    return report
