"""SGD with momentum, AdamW and the epoch driver."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .losses import ElrState, ce_loss_grad, elr_loss_grad, elr_update_targets, gce_loss_grad, softmax_probs


@dataclass(frozen=True)
class SgdConfig:
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigError(f"lr must be nonnegative, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigError(f"lr must be nonnegative, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("AdamW betas must lie in [0, 1)")
        if not self.eps > 0:
            raise ConfigError("AdamW eps must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")


@dataclass
class OptimState:
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def _check_grads(params, grads):
    for name, g in grads.items():
        if name not in params:
            raise ValueError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"shape mismatch for {name}: {g.shape} vs {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")


def _check_updated(params, state: OptimState):
    for name, theta in params.items():
        if not np.all(np.isfinite(theta)):
            raise NumericError(f"parameter {name} became non-finite (learning rate too large?)")
        for moments in (state.first, state.second):
            if name in moments and not np.all(np.isfinite(moments[name])):
                raise NumericError(f"optimizer state for {name} overflowed")


def sgd_step(params, grads, state: OptimState, config: SgdConfig) -> OptimState:
    """``v <- mu v + (g + wd theta)``; ``theta <- theta - lr v``. Updates in place."""
    _check_grads(params, grads)
    with np.errstate(over="ignore", invalid="ignore"):
        for name, g in grads.items():
            theta = params[name]
            d = g + config.weight_decay * theta
            v = state.first.get(name)
            v = d.copy() if v is None else config.momentum * v + d
            state.first[name] = v
            theta -= config.lr * v
    _check_updated(params, state)
    state.step += 1
    return state


def adamw_step(params, grads, state: OptimState, config: AdamWConfig) -> OptimState:
    """Bias-corrected Adam moments with decoupled weight decay. Updates in place."""
    _check_grads(params, grads)
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    with np.errstate(over="ignore", invalid="ignore"):
        for name, g in grads.items():
            theta = params[name]
            m = state.first.get(name, np.zeros_like(theta))
            v = state.second.get(name, np.zeros_like(theta))
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            state.first[name], state.second[name] = m, v
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            theta -= config.lr * (m_hat / (np.sqrt(v_hat) + config.eps) + config.weight_decay * theta)
    _check_updated(params, state)
    return state


class Optimizer:
    def __init__(self, config):
        self.config = config
        self.state = OptimState()

    def step(self, params, grads):
        if isinstance(self.config, SgdConfig):
            sgd_step(params, grads, self.state, self.config)
        else:
            adamw_step(params, grads, self.state, self.config)


def make_optimizer(config) -> Optimizer:
    if not isinstance(config, (SgdConfig, AdamWConfig)):
        raise ConfigError(f"unsupported optimizer config {config!r}")
    return Optimizer(config)


def optimizer_config(kind: str, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
    if kind == "sgd":
        return SgdConfig(lr=lr, momentum=momentum, weight_decay=weight_decay)
    if kind == "adamw":
        return AdamWConfig(lr=lr, weight_decay=weight_decay)
    raise ConfigError(f"optimizer kind must be sgd or adamw, got {kind!r}")


# ---------------------------------------------------------------- epoch loop


@dataclass
class EpochStats:
    mean_loss: float
    accuracy: float
    seen: int
    wall_ms: float
    batches: list = field(default_factory=list, repr=False)


def batch_loss_grad(kind: str, logits, labels, q: float = 0.7, elr: ElrState | None = None, rows=None):
    if kind == "ce":
        return ce_loss_grad(logits, labels)
    if kind == "gce":
        return gce_loss_grad(logits, labels, q)
    if kind == "elr":
        if elr is None:
            raise ValueError("ELR loss needs an ElrState")
        p = softmax_probs(logits)
        elr_update_targets(elr, p, rows)
        return elr_loss_grad(logits, labels, elr.targets[rows], elr.lam, probs=p, state=elr)
    raise ConfigError(f"loss kind must be one of ce, gce, elr; got {kind!r}")


def train_epoch(ext, head, inputs, labels, loss: str, optimizer: Optimizer, batch_size: int,
                seed, mode: str = "FFT", indices=None, q: float = 0.7, elr: ElrState | None = None,
                record_batches: bool = False) -> EpochStats:
    """One pass over ``indices`` (default: every row) in a seeded shuffle.

    ELR targets are indexed by the global row index. The last partial
    batch is kept.
    """
    from .model import backward, forward

    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    idx = np.arange(len(labels)) if indices is None else np.asarray(indices, dtype=np.int64)
    order = np.random.default_rng(seed).permutation(idx)
    params = head.params()
    if mode.upper() == "FFT":
        params.update(ext.params())
    start = time.perf_counter()
    total, correct, seen = 0.0, 0, 0
    batches = []
    for lo in range(0, order.size, batch_size):
        rows = order[lo : lo + batch_size]
        y = labels[rows]
        logits, cache = forward(ext, head, inputs[rows], mode)
        per_sample, dlogits = batch_loss_grad(loss, logits, y, q=q, elr=elr, rows=rows)
        grads = backward(cache, dlogits, mode)
        optimizer.step(params, grads)
        head.version += 1
        if mode.upper() == "FFT":
            ext.version += 1
        total += float(per_sample.sum())
        correct += int(np.count_nonzero(logits.argmax(axis=1) == y))
        seen += rows.size
        if record_batches:
            batches.append(rows)
    wall_ms = (time.perf_counter() - start) * 1e3
    if seen == 0:
        return EpochStats(0.0, 0.0, 0, wall_ms, batches)
    mean = total / seen
    if not np.isfinite(mean):
        raise NumericError("non-finite epoch loss")
    return EpochStats(mean, correct / seen, seen, wall_ms, batches)
