"""Classification losses with analytic gradients w.r.t. the logits.

Every function accepts logits of shape ``(..., C)`` and integer labels of
shape ``(...)`` and returns per-sample losses together with per-sample
logit gradients (not averaged over the batch).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError

log = logging.getLogger(__name__)

CE_CLAMP = 1e-12
GCE_CLAMP = 1e-7
ELR_CLAMP = 1e-6


@dataclass(frozen=True)
class GceConfig:
    q: float = 0.7

    def __post_init__(self):
        check_q(self.q)


def check_q(q: float):
    if not 0.0 < q <= 1.0:
        raise ConfigError(f"GCE q must lie in (0, 1], got {q}")


def softmax_probs(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logits")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _onehot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ValueError(f"label outside [0, {num_classes})")
    return np.eye(num_classes)[labels]


def _label_prob(p: np.ndarray, labels) -> np.ndarray:
    return np.take_along_axis(p, np.asarray(labels)[..., None], axis=-1)[..., 0]


def ce_loss_grad(logits, labels, probs=None):
    """Cross entropy ``-log p_y`` with ``p_y`` clamped at 1e-12."""
    p = softmax_probs(logits) if probs is None else probs
    y = _onehot(labels, p.shape[-1])
    loss = -np.log(np.maximum(_label_prob(p, labels), CE_CLAMP))
    return loss, p - y


def gce_loss_grad(logits, labels, q: float = 0.7, probs=None):
    """Generalized cross entropy ``(1 - p_y^q) / q``.

    ``p_y`` is clamped to [1e-7, 1]; below the clamp the gradient factor
    ``p_y^(q-1)`` is held at its clamped value so gradients stay bounded.
    """
    check_q(q)
    p = softmax_probs(logits) if probs is None else probs
    y = _onehot(labels, p.shape[-1])
    py = _label_prob(p, labels)
    pc = np.clip(py, GCE_CLAMP, 1.0)
    loss = (1.0 - pc**q) / q
    # dL/dp_y = -p_y^(q-1);  dp_y/dz = p_y * (onehot - p)
    scale = pc ** (q - 1.0) * py
    return loss, -scale[..., None] * (y - p)


@dataclass
class ElrState:
    """Moving-average prediction targets, one row per training sample."""

    targets: np.ndarray
    beta: float = 0.7
    lam: float = 3.0
    clamp_hits: int = field(default=0, compare=False)

    @classmethod
    def zeros(cls, n: int, num_classes: int, beta: float = 0.7, lam: float = 3.0) -> "ElrState":
        if not 0.0 <= beta <= 1.0:
            raise ConfigError(f"ELR beta must lie in [0, 1], got {beta}")
        if lam < 0:
            raise ConfigError(f"ELR lambda must be nonnegative, got {lam}")
        return cls(np.zeros((n, num_classes)), beta, lam)


def elr_update_targets(state: ElrState, probs, indices) -> ElrState:
    """``t <- beta * t + (1 - beta) * p`` on the given rows only (in place)."""
    idx = np.asarray(indices, dtype=np.int64)
    n = state.targets.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"ELR index outside [0, {n})")
    state.targets[idx] = state.beta * state.targets[idx] + (1.0 - state.beta) * np.asarray(probs)
    return state


def elr_loss_grad(logits, labels, target_rows, lam: float, probs=None, state: ElrState | None = None):
    """Cross entropy plus ``lam * log(1 - <p, t>)``, inner term clamped at 1e-6."""
    p = softmax_probs(logits) if probs is None else probs
    ce, grad = ce_loss_grad(logits, labels, probs=p)
    if lam == 0:
        return ce, grad
    t = np.asarray(target_rows, dtype=np.float64)
    pt = np.sum(p * t, axis=-1)
    inner = 1.0 - pt
    clamped = inner < ELR_CLAMP
    if np.any(clamped):
        hits = int(np.count_nonzero(clamped))
        log.debug("ELR clamp active on %d rows", hits)
        if state is not None:
            state.clamp_hits += hits
    inner_c = np.maximum(inner, ELR_CLAMP)
    loss = ce + lam * np.log(inner_c)
    # d<p,t>/dz_j = p_j (t_j - <p,t>); zero where the clamp holds the term constant
    reg = -(lam / inner_c)[..., None] * p * (t - pt[..., None])
    reg = np.where(clamped[..., None], 0.0, reg)
    return loss, grad + reg


LOSS_KINDS = ("ce", "gce", "elr")
