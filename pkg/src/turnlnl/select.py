"""Small-loss clean-sample selection with two-component 1-D Gaussian mixtures."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import UNKNOWN_LABEL
from .errors import ConfigError, NumericError
from .losses import ce_loss_grad
from .model import predict

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-6
DEGENERATE_GAP = 1e-3
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class LossVector:
    values: np.ndarray
    lo: float
    hi: float

    @classmethod
    def from_values(cls, values) -> "LossVector":
        v = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise NumericError("non-finite per-sample loss")
        if v.size == 0:
            return cls(v, 0.0, 0.0)
        return cls(v, float(v.min()), float(v.max()))

    @property
    def normalized(self) -> np.ndarray:
        span = self.hi - self.lo
        if span <= 0:
            return np.zeros_like(self.values)
        return (self.values - self.lo) / span


@dataclass(frozen=True)
class Gmm1D:
    """Components ordered so index 0 is the low-mean one."""

    means: tuple[float, float]
    variances: tuple[float, float]
    weights: tuple[float, float]
    log_likelihoods: tuple[float, ...] = ()
    iterations: int = 0

    @property
    def degenerate(self) -> bool:
        return abs(self.means[1] - self.means[0]) < DEGENERATE_GAP


@dataclass(frozen=True)
class SelectionConfig:
    tau: float = 0.6
    min_class_fit: int = 20
    max_iters: int = 100
    tol: float = 1e-6
    seed: int = 0
    per_class: bool = True

    def __post_init__(self):
        if not 0.0 <= self.tau < 1.0:
            raise ConfigError(f"tau must lie in [0, 1), got {self.tau}")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")


@dataclass
class SelectionResult:
    indices: np.ndarray
    candidate_counts: np.ndarray
    quota: int
    purity: float | None = None
    fallback: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    candidates: list = field(default_factory=list, repr=False)

    def __len__(self):
        return self.indices.size


def per_sample_losses(ext, head, inputs, labels, batch_size: int = 4096) -> LossVector:
    """Cross-entropy loss of every row under the current model; no updates."""
    logits = predict(ext, head, inputs, batch_size)
    loss, _ = ce_loss_grad(logits, labels)
    return LossVector.from_values(loss)


def _component_logpdf(v, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var) + (v - mean) ** 2 / var)


def _log_joint(v, means, variances, weights):
    with np.errstate(divide="ignore"):
        logw = np.log(np.asarray(weights))
    return np.stack([
        logw[k] + _component_logpdf(v, means[k], variances[k]) for k in range(2)
    ])


def fit_gmm1d(values, max_iters: int = 100, tol: float = 1e-6, var_floor: float = VAR_FLOOR) -> Gmm1D:
    """EM for a two-component mixture on the given values.

    Means start at the 10th and 90th percentiles, variances at the sample
    variance, weights at 1/2. Stops when the log-likelihood gains less than
    ``tol``. All-equal inputs return a degenerate fit immediately.
    """
    return fit_gmm1d_many([values], max_iters, tol, var_floor)[0]


def fit_gmm1d_many(groups, max_iters: int = 100, tol: float = 1e-6, var_floor: float = VAR_FLOOR) -> list[Gmm1D]:
    """``fit_gmm1d`` on each array of ``groups``, run as one padded batch.

    Every group follows its own EM trajectory and stops on its own.
    """
    groups = [np.asarray(g, dtype=np.float64).reshape(-1) for g in groups]
    if any(g.size == 0 for g in groups):
        raise ConfigError("cannot fit a mixture to no values")
    fits: list[Gmm1D | None] = [None] * len(groups)
    live = []
    for k, g in enumerate(groups):
        if np.ptp(g) == 0:
            m = float(g[0])
            fits[k] = Gmm1D((m, m), (var_floor, var_floor), (0.5, 0.5))
        else:
            live.append(k)
    if not live:
        return fits

    width = max(groups[k].size for k in live)
    V = np.zeros((len(live), width))
    mask = np.zeros((len(live), width))
    for row, k in enumerate(live):
        V[row, : groups[k].size] = groups[k]
        mask[row, : groups[k].size] = 1.0
    n = mask.sum(axis=1)
    means = np.stack([np.percentile(groups[k], [10, 90]) for k in live])
    variances = np.repeat(np.maximum([groups[k].var() for k in live], var_floor)[:, None], 2, axis=1)
    weights = np.full((len(live), 2), 0.5)
    lls: list[list[float]] = [[] for _ in live]
    iters = np.zeros(len(live), dtype=np.int64)
    active = np.arange(len(live))

    for it in range(1, max_iters + 1):
        v, m = V[active], mask[active]
        with np.errstate(divide="ignore"):
            const = np.log(weights[active]) - 0.5 * (_LOG_2PI + np.log(variances[active]))
        scale = -0.5 / variances[active]
        d0 = v - means[active, :1]
        d1 = v - means[active, 1:]
        l0 = const[:, :1] + scale[:, :1] * d0 * d0
        l1 = const[:, 1:] + scale[:, 1:] * d1 * d1
        norm = np.logaddexp(l0, l1)
        ll = np.einsum("ij,ij->i", norm, m)
        keep = np.ones(active.size, dtype=bool)
        for j, row in enumerate(active):
            lls[row].append(float(ll[j]))
            iters[row] = it
            if len(lls[row]) > 1 and lls[row][-1] - lls[row][-2] < tol:
                keep[j] = False
        if not keep.any():
            break
        if not keep.all():
            active, v, m, l0, l1, norm = active[keep], v[keep], m[keep], l0[keep], l1[keep], norm[keep]
        for comp, lk in enumerate((l0, l1)):
            r = np.exp(lk - norm)
            r *= m
            nk = r.sum(axis=1)
            nk_safe = np.maximum(nk, np.finfo(float).tiny)
            mu = np.einsum("ij,ij->i", r, v) / nk_safe
            dev = v - mu[:, None]
            weights[active, comp] = nk / n[active]
            means[active, comp] = mu
            variances[active, comp] = np.maximum(np.einsum("ij,ij->i", r, dev * dev) / nk_safe, var_floor)

    for row, k in enumerate(live):
        order = np.argsort(means[row], kind="stable")
        fits[k] = Gmm1D(
            tuple(float(x) for x in means[row][order]),
            tuple(float(x) for x in variances[row][order]),
            tuple(float(x) for x in weights[row][order]),
            tuple(lls[row]),
            int(iters[row]),
        )
    return fits


def log_posteriors(gmm: Gmm1D, values) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(values, dtype=np.float64)
    joint = _log_joint(v, gmm.means, gmm.variances, gmm.weights)
    norm = np.logaddexp(joint[0], joint[1])
    return joint[0] - norm, joint[1] - norm


def posterior_low(gmm: Gmm1D, value):
    """Responsibility of the low-mean component for ``value``."""
    if gmm.degenerate:
        raise ValueError("posterior of a degenerate mixture")
    low, _ = log_posteriors(gmm, value)
    return np.exp(low)


def posterior_high(gmm: Gmm1D, value):
    if gmm.degenerate:
        raise ValueError("posterior of a degenerate mixture")
    _, high = log_posteriors(gmm, value)
    return np.exp(high)


def _class_candidates(values, members, gmm, tau):
    if gmm.degenerate:
        return members[values < values.mean()], True
    log_low, _ = log_posteriors(gmm, values)
    with np.errstate(divide="ignore"):
        return members[log_low > np.log(tau)], False


def select_clean(losses: LossVector, given_labels, num_classes: int, config: SelectionConfig = SelectionConfig(),
                 true_labels=None) -> SelectionResult:
    """Per-class small-loss candidates, then a class-balanced uniform subsample.

    Candidates of class c are rows labelled c whose low-component posterior
    exceeds ``tau``. Every class contributes ``N = min_c |candidates_c|``
    rows. Classes with fewer than ``min_class_fit`` rows (or all classes
    when ``per_class`` is off) use one mixture fitted on all losses.
    A degenerate fit falls back to "below the class mean"; a class left
    with no candidate contributes its lowest-loss row and N drops to 1.
    """
    labels = np.asarray(given_labels, dtype=np.int64)
    if num_classes < 1 or labels.size == 0:
        raise ConfigError("selection needs a nonempty dataset and C >= 1")
    if labels.size != losses.values.size:
        raise ValueError("losses and labels differ in length")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError("label outside [0, C)")
    norm = losses.normalized
    rng = np.random.default_rng([config.seed, 31])

    members_of = [np.flatnonzero(labels == c) for c in range(num_classes)]
    present = [c for c in range(num_classes) if members_of[c].size]
    own = [c for c in present if config.per_class and members_of[c].size >= config.min_class_fit]
    gmms = dict(zip(own, fit_gmm1d_many([norm[members_of[c]] for c in own], config.max_iters, config.tol)))
    global_fit = None
    if len(own) < len(present):
        global_fit = fit_gmm1d(norm, config.max_iters, config.tol)

    counts = np.zeros(num_classes, dtype=np.int64)
    fallback = np.zeros(num_classes, dtype=bool)
    candidates: list[np.ndarray] = []
    for c in range(num_classes):
        members = members_of[c]
        if members.size == 0:
            candidates.append(members)
            continue
        gmm = gmms[c] if c in gmms else global_fit
        cand, degenerate = _class_candidates(norm[members], members, gmm, config.tau)
        fallback[c] = degenerate
        counts[c] = cand.size
        candidates.append(cand)

    quota = int(min(counts[present]))
    if quota == 0:
        log.warning("a class has no clean candidate; falling back to one lowest-loss row per class")
        quota = 1
        for c in present:
            if candidates[c].size == 0:
                members = np.flatnonzero(labels == c)
                candidates[c] = members[[np.argmin(norm[members])]]
                fallback[c] = True

    chosen = [np.sort(rng.choice(candidates[c], size=quota, replace=False)) for c in present]
    indices = np.sort(np.concatenate(chosen))
    result = SelectionResult(indices, counts, quota, None, fallback, candidates)
    if true_labels is not None:
        result.purity = purity(result, labels, true_labels)
    return result


def purity(selection, given_labels, true_labels) -> float | None:
    """Share of selected rows whose given label is correct; rows with an
    unknown true label are ignored. ``None`` when nothing is countable."""
    idx = selection.indices if isinstance(selection, SelectionResult) else np.asarray(selection, dtype=np.int64)
    g = np.asarray(given_labels)[idx]
    t = np.asarray(true_labels)[idx]
    known = t != UNKNOWN_LABEL
    if not np.any(known):
        return None
    return float(np.mean(g[known] == t[known]))


def selection_dump_lines(epoch: int, result: SelectionResult, given_labels, true_labels=None) -> list[str]:
    """``epoch,class,candidates,N,purity`` rows, one per class."""
    labels = np.asarray(given_labels)
    lines = []
    for c, count in enumerate(result.candidate_counts):
        sel = result.indices[labels[result.indices] == c]
        p = purity(sel, labels, true_labels) if true_labels is not None and sel.size else None
        lines.append(f"{epoch},{c},{int(count)},{result.quota},{'' if p is None else f'{p:.6f}'}")
    return lines
