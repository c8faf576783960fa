"""TURN (linear probing, then cleansing + full fine-tuning) and the baselines."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, is_dataclass
from typing import Callable

import numpy as np

from .dataset import Dataset
from .errors import ConfigError
from .losses import LOSS_KINDS, ElrState, check_q
from .model import Extractor, LinearHead, extract, identity_extractor, init_extractor, init_head, predict
from .optim import AdamWConfig, SgdConfig, make_optimizer, train_epoch
from .select import SelectionConfig, SelectionResult, per_sample_losses, select_clean

log = logging.getLogger(__name__)

CLEANSING_MODES = ("multiple", "once", "none")


@dataclass(frozen=True)
class TurnConfig:
    e_lp: int = 20
    e_fft: int = 4
    tau: float = 0.6
    gce_q: float = 0.7
    cleansing: str = "multiple"
    lp_enabled: bool = True
    lp_optim: SgdConfig | AdamWConfig = SgdConfig(lr=1e-2)
    fft_optim: SgdConfig | AdamWConfig = AdamWConfig(lr=1e-3)
    batch_size: int = 128
    seed: int = 0
    min_class_fit: int = 20
    per_class: bool = True
    reinit_head: bool = False
    elr_beta: float = 0.7
    elr_lambda: float = 3.0

    def __post_init__(self):
        if self.e_lp < 0 or self.e_fft < 0:
            raise ConfigError("epoch counts must be nonnegative")
        if self.cleansing not in CLEANSING_MODES:
            raise ConfigError(f"cleansing must be one of {CLEANSING_MODES}, got {self.cleansing!r}")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        check_q(self.gce_q)
        SelectionConfig(tau=self.tau)

    def selection(self, epoch: int) -> SelectionConfig:
        return SelectionConfig(tau=self.tau, min_class_fit=self.min_class_fit, seed=self.seed * 1000 + epoch,
                               per_class=self.per_class)


@dataclass
class EpochRecord:
    stage: str
    epoch: int
    train_loss: float
    test_acc: float
    val_acc: float | None = None
    selected: int | None = None
    purity: float | None = None
    wall_ms: float = 0.0
    select_ms: float = 0.0

    @property
    def train_ms(self) -> float:
        """Wall-clock of the optimisation pass alone, without selection."""
        return self.wall_ms - self.select_ms


@dataclass
class RunReport:
    records: list[EpochRecord] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0
    selections: list[SelectionResult] = field(default_factory=list, repr=False)
    extractor: Extractor | None = field(default=None, repr=False)
    head: LinearHead | None = field(default=None, repr=False)

    @property
    def best(self) -> float:
        return max((r.test_acc for r in self.records), default=float("nan"))

    @property
    def last(self) -> float:
        return self.records[-1].test_acc if self.records else float("nan")

    @property
    def final_purity(self) -> float | None:
        for r in reversed(self.records):
            if r.purity is not None:
                return r.purity
        return None

    @property
    def wall_ms(self) -> float:
        return float(sum(r.wall_ms for r in self.records))


@dataclass
class FeatureCache:
    features: np.ndarray

    @classmethod
    def build(cls, ext: Extractor, inputs) -> "FeatureCache":
        return cls(extract(ext, inputs))


def config_echo(cfg) -> dict:
    def conv(v):
        if is_dataclass(v):
            return {"kind": type(v).__name__, **asdict(v)}
        return v
    return {k: conv(v) for k, v in vars(cfg).items()}


def evaluate(ext: Extractor, head: LinearHead, dataset: Dataset) -> float:
    """Argmax accuracy against ``given_labels``; ties go to the lowest class id."""
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    logits = predict(ext, head, dataset.inputs)
    return float(np.mean(logits.argmax(axis=1) == dataset.given_labels))


def _accuracy(ext, head, x, y):
    return float(np.mean(predict(ext, head, x).argmax(axis=1) == y))


Callback = Callable[[EpochRecord], None] | None


def _emit(report: RunReport, rec: EpochRecord, on_epoch: Callback):
    report.records.append(rec)
    if on_epoch is not None:
        on_epoch(rec)


def train_probe(ext, head, train: Dataset, test: Dataset, epochs: int, loss: str, optim_config, seed: int,
                batch_size: int = 128, q: float = 0.7, elr: ElrState | None = None, valid: Dataset | None = None,
                report: RunReport | None = None, on_epoch: Callback = None, stage: str = "lp"):
    """Train ``head`` on frozen features for ``epochs`` epochs.

    Features of every split are extracted once. ``ext`` is never modified.
    """
    cache = FeatureCache.build(ext, train.inputs)
    test_z = extract(ext, test.inputs)
    valid_z = extract(ext, valid.inputs) if valid is not None and len(valid) else None
    probe = identity_extractor(ext.out_dim)
    opt = make_optimizer(optim_config)
    for epoch in range(epochs):
        stats = train_epoch(probe, head, cache.features, train.given_labels, loss, opt, batch_size,
                            seed=[seed, 11, epoch], mode="LP", q=q, elr=elr)
        if report is not None:
            _emit(report, EpochRecord(
                stage, epoch + 1, stats.mean_loss,
                _accuracy(probe, head, test_z, test.given_labels),
                None if valid_z is None else _accuracy(probe, head, valid_z, valid.given_labels),
                wall_ms=stats.wall_ms,
            ), on_epoch)
    return head, cache


def run_lp(ext: Extractor, head: LinearHead, train: Dataset, config: TurnConfig, test: Dataset | None = None,
           valid: Dataset | None = None, report: RunReport | None = None, on_epoch: Callback = None):
    """Step 1: GCE linear probing on pre-extracted features."""
    return train_probe(ext, head, train, test if test is not None else train, config.e_lp, "gce",
                       config.lp_optim, config.seed, config.batch_size, q=config.gce_q, valid=valid,
                       report=report if test is not None else None, on_epoch=on_epoch)


def fft_extractor(ext: Extractor, dataset: Dataset, hidden: int, seed: int) -> Extractor:
    """Trainable extractor for Step 2. Identity extractors (feature bundles)
    are swapped for a zero-initialised residual adapter."""
    if ext.mode == "identity":
        return init_extractor(ext.in_dim, hidden, ext.in_dim, seed, mode="residual_adapter")
    return ext


def run_turn(ext: Extractor, head: LinearHead, train: Dataset, test: Dataset, config: TurnConfig,
             valid: Dataset | None = None, on_epoch: Callback = None, adapter_hidden: int = 128,
             on_selection: Callable[[int, SelectionResult], None] | None = None) -> RunReport:
    """Linear probing under GCE, then ``e_fft`` rounds of selection + CE fine-tuning.

    The caller's extractor and head are copied, not modified.
    """
    ext, head = ext.copy(), head.copy()
    report = RunReport(config=config_echo(config), seed=config.seed)
    if config.lp_enabled:
        run_lp(ext, head, train, config, test, valid, report, on_epoch)
    if config.reinit_head:
        head = init_head(ext.out_dim, train.num_classes, config.seed, zero=True)
    ext = fft_extractor(ext, train, adapter_hidden, config.seed)
    opt = make_optimizer(config.fft_optim)
    truth = train.true_labels
    subset: np.ndarray | None = None
    purity = None
    for epoch in range(config.e_fft):
        start = time.perf_counter()
        if config.cleansing == "multiple" or (config.cleansing == "once" and epoch == 0):
            losses = per_sample_losses(ext, head, train.inputs, train.given_labels)
            sel = select_clean(losses, train.given_labels, train.num_classes, config.selection(epoch), truth)
            subset, purity = sel.indices, sel.purity
            report.selections.append(sel)
            if on_selection is not None:
                on_selection(epoch + 1, sel)
        elif config.cleansing == "none":
            subset = None
        select_ms = (time.perf_counter() - start) * 1e3
        stats = train_epoch(ext, head, train.inputs, train.given_labels, "ce", opt, config.batch_size,
                            seed=[config.seed, 13, epoch], mode="FFT", indices=subset)
        _emit(report, EpochRecord(
            "fft", epoch + 1, stats.mean_loss,
            evaluate(ext, head, test),
            None if valid is None or not len(valid) else evaluate(ext, head, valid),
            len(train) if subset is None else int(subset.size),
            purity if subset is not None else None,
            select_ms + stats.wall_ms,
            select_ms,
        ), on_epoch)
    report.extractor, report.head = ext, head
    return report


@dataclass(frozen=True)
class BaselineConfig:
    method: str = "ce"
    tuning: str = "fft"
    epochs: int | None = None
    lp_optim: SgdConfig | AdamWConfig = SgdConfig(lr=1e-2)
    fft_optim: SgdConfig | AdamWConfig = AdamWConfig(lr=1e-3)
    batch_size: int = 128
    gce_q: float = 0.7
    elr_beta: float = 0.7
    elr_lambda: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.method not in LOSS_KINDS:
            raise ConfigError(f"baseline method must be one of {LOSS_KINDS}, got {self.method!r}")
        if self.tuning not in ("lp", "fft"):
            raise ConfigError(f"tuning must be lp or fft, got {self.tuning!r}")
        check_q(self.gce_q)

    @property
    def n_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return 20 if self.tuning == "lp" else 5


def run_baseline(ext: Extractor, head: LinearHead, train: Dataset, test: Dataset, config: BaselineConfig,
                 valid: Dataset | None = None, on_epoch: Callback = None, adapter_hidden: int = 128) -> RunReport:
    """Train with CE, GCE or ELR under LP or FFT on the full noisy set."""
    ext, head = ext.copy(), head.copy()
    report = RunReport(config=config_echo(config), seed=config.seed)
    elr = None
    if config.method == "elr":
        elr = ElrState.zeros(len(train), train.num_classes, config.elr_beta, config.elr_lambda)
    if config.tuning == "lp":
        train_probe(ext, head, train, test, config.n_epochs, config.method, config.lp_optim, config.seed,
                    config.batch_size, q=config.gce_q, elr=elr, valid=valid, report=report, on_epoch=on_epoch)
    else:
        ext = fft_extractor(ext, train, adapter_hidden, config.seed)
        opt = make_optimizer(config.fft_optim)
        for epoch in range(config.n_epochs):
            stats = train_epoch(ext, head, train.inputs, train.given_labels, config.method, opt,
                                config.batch_size, seed=[config.seed, 13, epoch], mode="FFT",
                                q=config.gce_q, elr=elr)
            _emit(report, EpochRecord(
                "fft", epoch + 1, stats.mean_loss, evaluate(ext, head, test),
                None if valid is None or not len(valid) else evaluate(ext, head, valid),
                len(train), None, stats.wall_ms,
            ), on_epoch)
    report.extractor, report.head = ext, head
    return report
