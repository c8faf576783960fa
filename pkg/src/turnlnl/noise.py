"""Synthetic label-noise injectors: symmetric, asymmetric and instance-dependent."""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import truncnorm

from .dataset import Dataset
from .errors import ConfigError, NumericError

NOISE_KINDS = ("none", "symmetric", "asymmetric", "instance")
STD_FLOOR = 1e-12

# CIFAR-100 fine label -> superclass (coarse) label.
_CIFAR100_COARSE = (
    4, 1, 14, 8, 0, 6, 7, 7, 18, 3, 3, 14, 9, 18, 7, 11, 3, 9, 7, 11,
    6, 11, 5, 10, 7, 6, 13, 15, 3, 15, 0, 11, 1, 10, 12, 14, 16, 9, 11, 5,
    5, 19, 8, 8, 15, 13, 14, 17, 18, 10, 16, 4, 17, 4, 2, 0, 17, 4, 18, 17,
    10, 3, 2, 12, 12, 16, 12, 1, 9, 19, 2, 10, 0, 1, 16, 12, 9, 13, 15, 13,
    16, 19, 2, 4, 6, 19, 5, 5, 8, 19, 18, 1, 2, 15, 6, 0, 17, 8, 14, 13,
)
CIFAR100_SUPERCLASSES = tuple(
    tuple(f for f in range(100) if _CIFAR100_COARSE[f] == s) for s in range(20)
)
BUILTIN_GROUPS = {"cifar100-super": CIFAR100_SUPERCLASSES}


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    ratio: float = 0.0
    groups: tuple[tuple[int, ...], ...] | None = None
    std: float = 0.1
    seed: int = 0
    allow_identity_flip: bool = False

    def validate(self, num_classes: int | None = None):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if not 0.0 <= self.ratio <= 1.0:
            raise ConfigError(f"ratio must lie in [0, 1], got {self.ratio}")
        if not self.std > 0:
            raise ConfigError(f"std must be positive, got {self.std}")
        if self.kind == "asymmetric":
            if self.groups is None:
                raise ConfigError("asymmetric noise needs groups")
            if num_classes is not None:
                check_groups(self.groups, num_classes)


@dataclass(frozen=True)
class InstanceNoiseDraw:
    W: np.ndarray
    flip_rates: np.ndarray


@dataclass(frozen=True)
class NoisyDataset:
    dataset: Dataset
    flip_mask: np.ndarray

    @property
    def flip_fraction(self) -> float:
        return float(self.flip_mask.mean()) if self.flip_mask.size else 0.0


def parse_groups(text: str) -> tuple[tuple[int, ...], ...]:
    """Parse ``[[0,1],[2,3]]`` or the name of a built-in table."""
    text = text.strip()
    if text in BUILTIN_GROUPS:
        return BUILTIN_GROUPS[text]
    try:
        value = ast.literal_eval(text)
        groups = tuple(tuple(int(c) for c in g) for g in value)
    except (ValueError, SyntaxError, TypeError) as exc:
        raise ConfigError(f"groups: cannot parse {text!r}") from exc
    return groups


def check_groups(groups, num_classes: int):
    seen = [c for g in groups for c in g]
    if len(seen) != len(set(seen)):
        raise ConfigError("groups: a class appears in more than one group")
    missing = set(range(num_classes)) - set(seen)
    if missing:
        raise ConfigError(f"groups: classes {sorted(missing)} are not in any group")
    extra = set(seen) - set(range(num_classes))
    if extra:
        raise ConfigError(f"groups: unknown classes {sorted(extra)}")


def successor_map(groups, num_classes: int) -> np.ndarray:
    check_groups(groups, num_classes)
    succ = np.arange(num_classes)
    for g in groups:
        for i, c in enumerate(g):
            succ[c] = g[(i + 1) % len(g)]
    return succ


def _flip_count(ratio: float, n: int) -> int:
    return min(n, math.floor(ratio * n + 1e-9))


def _require_truth(dataset: Dataset) -> np.ndarray:
    if dataset.true_labels is None:
        raise ConfigError("noise injection needs a dataset with true labels")
    if np.any(dataset.true_labels < 0):
        raise ConfigError("noise injection needs every true label to be known")
    return dataset.true_labels


def _wrap(dataset: Dataset, truth: np.ndarray, noisy: np.ndarray) -> NoisyDataset:
    return NoisyDataset(dataset.with_labels(noisy), noisy != truth)


def inject_symmetric(dataset: Dataset, ratio: float, seed: int, allow_identity_flip: bool = False) -> NoisyDataset:
    """Flip exactly ``floor(ratio * N)`` labels to uniformly drawn classes.

    Replacement classes exclude the true class unless ``allow_identity_flip``.
    """
    NoiseSpec("symmetric", ratio).validate()
    truth = _require_truth(dataset)
    C = dataset.num_classes
    n_flip = _flip_count(ratio, len(dataset))
    if n_flip and C < 2:
        raise ConfigError("symmetric noise needs at least two classes")
    rng = np.random.default_rng(seed)
    rows = rng.permutation(len(dataset))[:n_flip]
    noisy = truth.copy()
    if allow_identity_flip:
        noisy[rows] = rng.integers(0, C, size=n_flip)
    else:
        draw = rng.integers(0, C - 1, size=n_flip)
        noisy[rows] = draw + (draw >= truth[rows])
    return _wrap(dataset, truth, noisy)


def inject_asymmetric(dataset: Dataset, groups, ratio: float, seed: int) -> NoisyDataset:
    """Move ``floor(ratio * n_c)`` rows of each class c to its in-group successor."""
    NoiseSpec("asymmetric", ratio, groups=tuple(map(tuple, groups))).validate(dataset.num_classes)
    truth = _require_truth(dataset)
    succ = successor_map(groups, dataset.num_classes)
    rng = np.random.default_rng(seed)
    noisy = truth.copy()
    for c in range(dataset.num_classes):
        members = np.flatnonzero(truth == c)
        rows = rng.permutation(members)[: _flip_count(ratio, members.size)]
        noisy[rows] = succ[c]
    return _wrap(dataset, truth, noisy)


def sample_flip_rates(ratio: float, std: float, n: int, rng: np.random.Generator) -> np.ndarray:
    std = max(std, STD_FLOOR)
    a, b = (0.0 - ratio) / std, (1.0 - ratio) / std
    q = truncnorm.rvs(a, b, loc=ratio, scale=std, size=n, random_state=rng)
    return np.clip(q, 0.0, 1.0)


def instance_transition(x: np.ndarray, truth: np.ndarray, W: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Per-row label distribution: mass ``1 - q`` on the true class, the rest
    spread by a softmax over ``x @ W`` with the true class excluded."""
    scores = x @ W
    rows = np.arange(len(truth))
    scores[rows, truth] = -np.inf
    scores -= scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    probs = q[:, None] * e / e.sum(axis=1, keepdims=True)
    probs[rows, truth] = 1.0 - q
    return probs


def inject_instance(dataset: Dataset, ratio: float, std: float, seed: int) -> tuple[NoisyDataset, InstanceNoiseDraw]:
    NoiseSpec("instance", ratio, std=max(std, STD_FLOOR)).validate()
    if dataset.kind != "raw":
        raise ConfigError("instance-dependent noise is defined on raw inputs")
    truth = _require_truth(dataset)
    C = dataset.num_classes
    if C < 2:
        raise ConfigError("instance-dependent noise needs at least two classes")
    x = dataset.inputs
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite input row")
    rng = np.random.default_rng(seed)
    q = sample_flip_rates(ratio, std, len(dataset), rng)
    W = rng.standard_normal((dataset.dim, C))
    probs = instance_transition(x, truth, W, q)
    u = rng.random(len(dataset))
    cdf = np.cumsum(probs, axis=1)
    noisy = (u[:, None] >= cdf).sum(axis=1)
    # u can exceed a final cdf that rounds below 1: take the last class with mass
    over = noisy >= C
    if np.any(over):
        last_positive = C - 1 - np.argmax(probs[over][:, ::-1] > 0, axis=1)
        noisy[over] = last_positive
    return _wrap(dataset, truth, noisy), InstanceNoiseDraw(W, q)


def inject(dataset: Dataset, spec: NoiseSpec) -> tuple[NoisyDataset, InstanceNoiseDraw | None]:
    spec.validate(dataset.num_classes)
    if spec.kind == "none":
        truth = _require_truth(dataset)
        return _wrap(dataset, truth, truth.copy()), None
    if spec.kind == "symmetric":
        return inject_symmetric(dataset, spec.ratio, spec.seed, spec.allow_identity_flip), None
    if spec.kind == "asymmetric":
        return inject_asymmetric(dataset, spec.groups, spec.ratio, spec.seed), None
    return inject_instance(dataset, spec.ratio, spec.std, spec.seed)
