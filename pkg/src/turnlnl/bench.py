"""The S1 desk benchmark: Gaussian clusters and a pretrained stand-in extractor.

Two pretraining profiles are provided. ``S1`` pretrains for a single epoch
so the frozen features are usable (clean LP accuracy about 0.9) but leave
room for fine-tuning to help; this is the regime in which LP, FFT and TURN
are compared. ``WELL_PRETRAINED`` pretrains for ten epochs and uses the
library's default optimizers; its features are close to the Bayes limit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

from .dataset import Dataset, SyntheticSpec, generate_synthetic
from .model import Extractor, LinearHead, init_model, pretrain_extractor
from .noise import NoisyDataset, inject_symmetric
from .optim import AdamWConfig, SgdConfig
from .pipeline import BaselineConfig, TurnConfig

S1_SPEC = SyntheticSpec(num_classes=20, input_dim=64, per_class_train=500, per_class_test=100,
                        per_class_pretrain=500, separation=3.0)
S1_HIDDEN = 128
S1_FEATURES = 32


@dataclass(frozen=True)
class Profile:
    name: str
    pretrain_epochs: int
    pretrain_optim: SgdConfig | AdamWConfig
    lp_optim: SgdConfig | AdamWConfig
    fft_optim: SgdConfig | AdamWConfig


S1 = Profile("s1", 1, AdamWConfig(lr=1e-3), SgdConfig(lr=3e-3), AdamWConfig(lr=5e-3))
WELL_PRETRAINED = Profile("well-pretrained", 10, AdamWConfig(lr=1e-3), TurnConfig().lp_optim, TurnConfig().fft_optim)


@dataclass(frozen=True)
class Benchmark:
    train: Dataset
    test: Dataset
    pretrain: Dataset
    extractor: Extractor
    head: LinearHead
    profile: Profile
    seed: int

    def symmetric(self, ratio: float) -> NoisyDataset:
        """Symmetric noise on the train split, seeded like the CLI does."""
        return inject_symmetric(self.train, ratio, self.seed)

    def turn_config(self, **overrides) -> TurnConfig:
        cfg = TurnConfig(lp_optim=self.profile.lp_optim, fft_optim=self.profile.fft_optim, seed=self.seed)
        return replace(cfg, **overrides)

    def baseline_config(self, method: str, tuning: str, **overrides) -> BaselineConfig:
        cfg = BaselineConfig(method, tuning, lp_optim=self.profile.lp_optim, fft_optim=self.profile.fft_optim,
                             seed=self.seed)
        return replace(cfg, **overrides)


@lru_cache(maxsize=8)
def s1(seed: int = 0, profile: Profile = S1, spec: SyntheticSpec = S1_SPEC) -> Benchmark:
    """Generate the splits for ``seed`` and pretrain the extractor once (cached)."""
    train, test, pre = generate_synthetic(replace(spec, seed=seed))
    ext, head = init_model(spec.input_dim, S1_HIDDEN, S1_FEATURES, spec.num_classes, seed)
    ext = pretrain_extractor(ext, None, pre, profile.pretrain_epochs, profile.pretrain_optim, seed)
    return Benchmark(train, test, pre, ext, head, profile, seed)
