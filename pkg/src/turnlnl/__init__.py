"""Noisy-label training: GCE linear probing, then small-loss selection and full fine-tuning."""

from .dataset import Dataset, SplitSpec, SyntheticSpec, generate_synthetic, read_dataset, split, write_dataset
from .errors import ConfigError, DataError, NumericError, TurnError
from .losses import ElrState, ce_loss_grad, elr_loss_grad, gce_loss_grad
from .model import Extractor, LinearHead, backward, forward, init_model, load_model, pretrain_extractor, save_model
from .noise import NoiseSpec, inject, inject_asymmetric, inject_instance, inject_symmetric
from .optim import AdamWConfig, SgdConfig, train_epoch
from .pipeline import BaselineConfig, RunReport, TurnConfig, evaluate, run_baseline, run_lp, run_turn
from .select import SelectionConfig, SelectionResult, fit_gmm1d, per_sample_losses, select_clean

__all__ = [
    "Dataset", "SplitSpec", "SyntheticSpec", "generate_synthetic", "read_dataset", "split",
    "write_dataset", "ConfigError", "DataError", "NumericError", "TurnError", "ElrState",
    "ce_loss_grad", "elr_loss_grad", "gce_loss_grad", "Extractor", "LinearHead", "backward",
    "forward", "init_model", "load_model", "pretrain_extractor", "save_model", "NoiseSpec",
    "inject", "inject_asymmetric", "inject_instance", "inject_symmetric", "AdamWConfig",
    "SgdConfig", "train_epoch", "BaselineConfig", "RunReport", "TurnConfig", "evaluate",
    "run_baseline", "run_lp", "run_turn", "SelectionConfig", "SelectionResult", "fit_gmm1d",
    "per_sample_losses", "select_clean",
]

__version__ = "0.1.0"
