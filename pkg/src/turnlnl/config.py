"""INI-style experiment configuration with comma-separated sweep axes.

Example::

    [data]
    source = synthetic
    classes = 20

    [noise]
    kind = symmetric
    ratio = 0.6, 0.9

    [method]
    name = turn

    [turn]
    tau = 0.3, 0.6, 0.9

Only ``tau``, ``e_lp``, ``e_fft``, ``ratio``, ``lp_lr``/``fft_lr`` and
``seed`` take lists; every other key holds one value.
"""

from __future__ import annotations

import configparser
import itertools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError
from .noise import BUILTIN_GROUPS, NOISE_KINDS, NoiseSpec, check_groups, parse_groups
from .optim import optimizer_config
from .pipeline import CLEANSING_MODES, BaselineConfig, TurnConfig

METHODS = ("turn", "ce", "gce", "elr")
SOURCES = ("synthetic", "bundle")
SWEEP_KEYS = {("turn", "tau"), ("turn", "e_lp"), ("turn", "e_fft"), ("noise", "ratio"),
              ("optim", "lp_lr"), ("optim", "fft_lr"), ("run", "seed")}
_SEED_MAX = 2**64 - 1


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    return int(text.strip())


def _float(text: str) -> float:
    v = float(text.strip())
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _str(text: str) -> str:
    return text.strip()


def _opt_int(text: str):
    return None if text.strip().lower() in ("", "none", "default") else _int(text)


_TURN, _BASE = TurnConfig(), BaselineConfig()

# section -> key -> (parser, default, check); check returns an error message or None
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any, Callable[[Any], str | None] | None]]] = {
    "data": {
        "source": (_str, "synthetic", lambda v: None if v in SOURCES else f"must be one of {SOURCES}"),
        "path": (_str, "", None),
        "classes": (_int, 20, lambda v: None if v >= 1 else "must be >= 1"),
        "dim": (_int, 64, lambda v: None if v >= 1 else "must be >= 1"),
        "feature_dim": (_int, 32, lambda v: None if v >= 1 else "must be >= 1"),
        "train_per_class": (_int, 500, lambda v: None if v >= 1 else "must be >= 1"),
        "test_per_class": (_int, 100, lambda v: None if v >= 1 else "must be >= 1"),
        "pretrain_per_class": (_int, 500, lambda v: None if v >= 1 else "must be >= 1"),
        "separation": (_float, 3.0, lambda v: None if v >= 0 else "must be >= 0"),
        "valid_fraction": (_float, 0.0, lambda v: None if 0 <= v < 1 else "must lie in [0, 1)"),
    },
    "noise": {
        "kind": (_str, "none", lambda v: None if v in NOISE_KINDS else f"must be one of {NOISE_KINDS}"),
        "ratio": (_float, 0.0, lambda v: None if 0 <= v <= 1 else "must lie in [0, 1]"),
        "std": (_float, 0.1, lambda v: None if v > 0 else "must be > 0"),
        "groups": (_str, "", None),
        "allow_identity_flip": (_bool, False, None),
    },
    "model": {
        "hidden": (_int, 128, lambda v: None if v >= 1 else "must be >= 1"),
        "adapter": (_int, 128, lambda v: None if v >= 1 else "must be >= 1"),
        "reinit_head": (_bool, False, None),
        "pretrain_epochs": (_int, 10, lambda v: None if v >= 0 else "must be >= 0"),
    },
    "method": {
        "name": (_str, "turn", lambda v: None if v in METHODS else f"must be one of {METHODS}"),
        "tuning": (_str, "fft", lambda v: None if v in ("lp", "fft") else "must be lp or fft"),
        "q": (_float, _TURN.gce_q, lambda v: None if 0 < v <= 1 else "must lie in (0, 1]"),
        "elr_beta": (_float, _TURN.elr_beta, lambda v: None if 0 <= v <= 1 else "must lie in [0, 1]"),
        "elr_lambda": (_float, _TURN.elr_lambda, lambda v: None if v >= 0 else "must be >= 0"),
    },
    "turn": {
        "e_lp": (_int, _TURN.e_lp, lambda v: None if v >= 0 else "must be >= 0"),
        "e_fft": (_int, _TURN.e_fft, lambda v: None if v >= 0 else "must be >= 0"),
        "tau": (_float, _TURN.tau, lambda v: None if 0 <= v < 1 else "must lie in [0, 1)"),
        "cleansing": (_str, _TURN.cleansing,
                      lambda v: None if v in CLEANSING_MODES else f"must be one of {CLEANSING_MODES}"),
        "lp_enabled": (_bool, True, None),
        "min_class_fit": (_int, _TURN.min_class_fit, lambda v: None if v >= 1 else "must be >= 1"),
        "per_class": (_bool, _TURN.per_class, None),
    },
    "optim": {
        "lp_kind": (_str, "sgd" if type(_TURN.lp_optim).__name__ == "SgdConfig" else "adamw",
                    lambda v: None if v in ("sgd", "adamw") else "must be sgd or adamw"),
        "lp_lr": (_float, _TURN.lp_optim.lr, lambda v: None if v > 0 else "must be > 0"),
        "fft_kind": (_str, "sgd" if type(_TURN.fft_optim).__name__ == "SgdConfig" else "adamw",
                     lambda v: None if v in ("sgd", "adamw") else "must be sgd or adamw"),
        "fft_lr": (_float, _TURN.fft_optim.lr, lambda v: None if v > 0 else "must be > 0"),
        "momentum": (_float, 0.9, lambda v: None if 0 <= v < 1 else "must lie in [0, 1)"),
        "weight_decay": (_float, 0.0, lambda v: None if v >= 0 else "must be >= 0"),
        "batch": (_int, _TURN.batch_size, lambda v: None if v >= 1 else "must be >= 1"),
    },
    "run": {
        "seed": (_int, 0, lambda v: None if 0 <= v <= _SEED_MAX else "must be an unsigned 64-bit integer"),
        "epochs": (_opt_int, None, lambda v: None if v is None or v >= 0 else "must be >= 0"),
        "deterministic": (_bool, False, None),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed configuration. ``values[section][key]`` is a list for sweep keys."""

    values: dict = field(default_factory=dict)
    sections: frozenset = frozenset()
    source: str = "<defaults>"

    def get(self, section: str, key: str):
        return self.values[section][key]

    @property
    def has_noise(self) -> bool:
        return "noise" in self.sections

    def with_seeds(self, seeds: list[int]) -> "ExperimentConfig":
        vals = {s: dict(v) for s, v in self.values.items()}
        for s in seeds:
            _check("run", "seed", s)
        vals["run"]["seed"] = list(seeds)
        return replace(self, values=vals)

    def runs(self) -> list["RunSpec"]:
        """Cartesian product of the sweep axes in a fixed order."""
        axes = sorted(SWEEP_KEYS)
        lists = [self.values[s][k] for s, k in axes]
        out = []
        for combo in itertools.product(*lists):
            vals = {s: dict(v) for s, v in self.values.items()}
            for (s, k), v in zip(axes, combo):
                vals[s][k] = v
            out.append(RunSpec(vals, self.has_noise))
        return out


def _check(section, key, value):
    check = SCHEMA[section][key][2]
    msg = check(value) if check else None
    if msg:
        raise ConfigError(f"[{section}] {key} = {value!r}: {msg}")


def _parse_value(section: str, key: str, raw: str):
    parser = SCHEMA[section][key][0]
    sweep = (section, key) in SWEEP_KEYS
    if key == "groups":
        parts = [raw]
    else:
        parts = [p for p in raw.split(",")] if "," in raw else [raw]
    if len(parts) > 1 and not sweep:
        raise ConfigError(f"[{section}] {key}: lists are only allowed on sweep keys")
    vals = []
    for p in parts:
        try:
            v = parser(p)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} = {p.strip()!r}: {exc}") from None
        _check(section, key, v)
        vals.append(v)
    if sweep and len(set(vals)) != len(vals):
        raise ConfigError(f"[{section}] {key}: repeated sweep value")
    return vals if sweep else vals[0]


def defaults() -> dict:
    return {s: {k: ([d] if (s, k) in SWEEP_KEYS else d) for k, (_, d, _) in keys.items()}
            for s, keys in SCHEMA.items()}


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   default_section="\x00defaults")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = defaults()
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key [{section}] {key}")
            values[section][key] = _parse_value(section, key, raw)
    cfg = ExperimentConfig(values, frozenset(cp.sections()), source)
    _cross_check(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def _cross_check(cfg: ExperimentConfig):
    data, noise = cfg.values["data"], cfg.values["noise"]
    if data["source"] == "bundle" and not data["path"]:
        raise ConfigError("[data] path is required when source = bundle")
    if noise["kind"] == "asymmetric":
        if not noise["groups"]:
            raise ConfigError("[noise] groups is required for asymmetric noise")
        groups = resolve_groups(noise["groups"])
        if data["source"] == "synthetic":
            try:
                check_groups(groups, data["classes"])
            except ConfigError as exc:
                raise ConfigError(f"[noise] groups: {exc}") from None


def resolve_groups(text: str):
    if not text:
        return None
    try:
        return BUILTIN_GROUPS[text] if text in BUILTIN_GROUPS else parse_groups(text)
    except ConfigError as exc:
        raise ConfigError(f"[noise] groups: {exc}") from None


@dataclass(frozen=True)
class RunSpec:
    """One point of the sweep: every value is a scalar."""

    values: dict
    has_noise: bool = False

    def __getitem__(self, section):
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def method(self) -> str:
        return self.values["method"]["name"]

    @property
    def tuning(self) -> str:
        return "lp+fft" if self.method == "turn" else self.values["method"]["tuning"]

    def noise_spec(self, seed: int) -> NoiseSpec:
        n = self.values["noise"]
        kind = n["kind"] if self.has_noise else "none"
        return NoiseSpec(kind, n["ratio"], resolve_groups(n["groups"]), n["std"], seed, n["allow_identity_flip"])

    def _optims(self):
        o = self.values["optim"]
        lp = optimizer_config(o["lp_kind"], o["lp_lr"], o["momentum"], o["weight_decay"])
        fft = optimizer_config(o["fft_kind"], o["fft_lr"], o["momentum"], o["weight_decay"])
        return lp, fft

    def turn_config(self) -> TurnConfig:
        t, m = self.values["turn"], self.values["method"]
        lp, fft = self._optims()
        return TurnConfig(
            e_lp=t["e_lp"], e_fft=t["e_fft"], tau=t["tau"], gce_q=m["q"], cleansing=t["cleansing"],
            lp_enabled=t["lp_enabled"], lp_optim=lp, fft_optim=fft, batch_size=self.values["optim"]["batch"],
            seed=self.seed, min_class_fit=t["min_class_fit"], per_class=t["per_class"],
            reinit_head=self.values["model"]["reinit_head"], elr_beta=m["elr_beta"], elr_lambda=m["elr_lambda"],
        )

    def baseline_config(self) -> BaselineConfig:
        m = self.values["method"]
        lp, fft = self._optims()
        return BaselineConfig(
            method=m["name"], tuning=m["tuning"], epochs=self.values["run"]["epochs"], lp_optim=lp, fft_optim=fft,
            batch_size=self.values["optim"]["batch"], gce_q=m["q"], elr_beta=m["elr_beta"],
            elr_lambda=m["elr_lambda"], seed=self.seed,
        )

    def run_id(self, index: int) -> str:
        n, t, o = self.values["noise"], self.values["turn"], self.values["optim"]
        noise = f"{n['kind']}{n['ratio']:g}" if self.has_noise and n["kind"] != "none" else "clean"
        parts = [f"{index:03d}", self.method if self.method == "turn" else f"{self.method}-{self.tuning}", noise]
        if self.method == "turn":
            parts += [f"tau{t['tau']:g}", f"elp{t['e_lp']}", f"efft{t['e_fft']}"]
        parts += [f"lr{o['lp_lr']:g}-{o['fft_lr']:g}", f"s{self.seed}"]
        return "_".join(parts)
