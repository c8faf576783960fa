"""Datasets: in-memory representation, synthetic generation, splits and
the on-disk bundle format.

A bundle is a directory with ``features.tfv``, ``given_labels.tlb``,
an optional ``true_labels.tlb`` and ``meta.txt``. All integers are
little-endian; features are stored as float32 and promoted to float64
on load.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericError

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"TURNFV01"
LABEL_MAGIC = b"TURNLB01"
UNKNOWN_LABEL = -1
_UNKNOWN_U32 = 0xFFFFFFFF
KINDS = ("raw", "feature")


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray
    given_labels: np.ndarray
    true_labels: np.ndarray | None = None
    num_classes: int = 0
    kind: str = "raw"

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"inputs must be 2-D, got shape {x.shape}")
        y = np.asarray(self.given_labels, dtype=np.int64).reshape(-1)
        t = None
        if self.true_labels is not None:
            t = np.asarray(self.true_labels, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "given_labels", y)
        object.__setattr__(self, "true_labels", t)
        for a in (x, y) + ((t,) if t is not None else ()):
            a.setflags(write=False)
        self._validate()

    def _validate(self):
        n = self.inputs.shape[0]
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.num_classes < 1 and n > 0:
            raise ConfigError("num_classes must be positive")
        if len(self.given_labels) != n:
            raise DataError(f"given_labels has {len(self.given_labels)} rows, inputs has {n}")
        if n and (self.given_labels.min() < 0 or self.given_labels.max() >= self.num_classes):
            raise DataError(f"given label outside [0, {self.num_classes})")
        if self.true_labels is not None:
            if len(self.true_labels) != n:
                raise DataError(f"true_labels has {len(self.true_labels)} rows, inputs has {n}")
            known = self.true_labels[self.true_labels != UNKNOWN_LABEL]
            if known.size and (known.min() < 0 or known.max() >= self.num_classes):
                raise DataError(f"true label outside [0, {self.num_classes})")
        if not np.all(np.isfinite(self.inputs)):
            raise NumericError("non-finite entry in inputs")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        t = None if self.true_labels is None else self.true_labels[idx]
        return replace(self, inputs=self.inputs[idx], given_labels=self.given_labels[idx], true_labels=t)

    def with_labels(self, given_labels) -> "Dataset":
        return replace(self, given_labels=np.asarray(given_labels))

    def equals(self, other: "Dataset") -> bool:
        if not isinstance(other, Dataset):
            return False
        same_truth = (self.true_labels is None) == (other.true_labels is None)
        if same_truth and self.true_labels is not None:
            same_truth = np.array_equal(self.true_labels, other.true_labels)
        return (
            self.kind == other.kind
            and self.num_classes == other.num_classes
            and self.inputs.shape == other.inputs.shape
            and np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.given_labels, other.given_labels)
            and same_truth
        )


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 20
    input_dim: int = 64
    per_class_train: int = 500
    per_class_test: int = 100
    per_class_pretrain: int = 500
    separation: float = 3.0
    seed: int = 0

    def validate(self):
        if self.num_classes < 1 or self.input_dim < 1:
            raise ConfigError("num_classes and input_dim must be >= 1")
        for name in ("per_class_train", "per_class_test", "per_class_pretrain"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not (self.separation >= 0 and math.isfinite(self.separation)):
            raise ConfigError("separation must be a finite nonnegative number")


@dataclass(frozen=True)
class SplitSpec:
    fraction: float = 0.0
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.fraction < 1.0:
            raise ConfigError("validation fraction must lie in [0, 1)")


MEAN_DIM_REFERENCE = 2


def class_means(spec: SyntheticSpec) -> np.ndarray:
    """Class centres shared by every split of a synthetic benchmark.

    Centres are ``separation * g / sqrt(input_dim / 2)`` with ``g`` a
    standard Gaussian draw. Two centres then sit about ``2 * separation``
    apart (in units of the unit-variance sample noise) whatever the input
    dimension, so ``separation`` alone sets how hard the benchmark is.
    """
    rng = np.random.default_rng([spec.seed, 0])
    scale = spec.separation / math.sqrt(spec.input_dim / MEAN_DIM_REFERENCE)
    return scale * rng.standard_normal((spec.num_classes, spec.input_dim))



def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Draw (train, test, pretrain) splits of a Gaussian-cluster benchmark.

    Inputs are rounded to float32 so that a written bundle reads back
    bit-for-bit.
    """
    spec.validate()
    mu = class_means(spec)
    out = []
    for stream, per_class in enumerate(
        (spec.per_class_train, spec.per_class_test, spec.per_class_pretrain), start=1
    ):
        rng = np.random.default_rng([spec.seed, stream])
        labels = np.repeat(np.arange(spec.num_classes), per_class)
        x = mu[labels] + rng.standard_normal((labels.size, spec.input_dim))
        x = x.astype(np.float32).astype(np.float64)
        out.append(Dataset(x, labels, labels.copy(), spec.num_classes, "raw"))
    return tuple(out)


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Stratified train/validation split."""
    spec.validate()
    if len(dataset) == 0:
        raise ConfigError("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    valid_idx = []
    for c in range(dataset.num_classes):
        members = np.flatnonzero(dataset.given_labels == c)
        if members.size == 0:
            continue
        k = math.floor(spec.fraction * members.size + 1e-9)
        if k < 1 and spec.fraction > 0:
            log.warning("class %d has too few rows (%d) for a validation share", c, members.size)
            continue
        valid_idx.append(rng.permutation(members)[:k])
    valid = np.sort(np.concatenate(valid_idx)) if valid_idx else np.empty(0, dtype=np.int64)
    keep = np.ones(len(dataset), dtype=bool)
    keep[valid] = False
    return dataset.subset(np.flatnonzero(keep)), dataset.subset(valid)


# ---------------------------------------------------------------- persistence


def _encode_labels(labels: np.ndarray) -> bytes:
    raw = np.where(labels == UNKNOWN_LABEL, _UNKNOWN_U32, labels).astype("<u4")
    return LABEL_MAGIC + struct.pack("<Q", labels.size) + raw.tobytes()


def _decode_labels(blob: bytes, path: Path) -> np.ndarray:
    if len(blob) < 16 or blob[:8] != LABEL_MAGIC:
        raise DataError(f"{path}: unrecognized format")
    (n,) = struct.unpack("<Q", blob[8:16])
    if len(blob) != 16 + 4 * n:
        raise DataError(f"{path}: expected {n} labels, file holds {(len(blob) - 16) // 4}")
    raw = np.frombuffer(blob, dtype="<u4", offset=16).astype(np.int64)
    raw[raw == _UNKNOWN_U32] = UNKNOWN_LABEL
    return raw


def encode_features(x: np.ndarray, num_classes: int) -> bytes:
    n, d = x.shape
    return FEATURE_MAGIC + struct.pack("<QQQ", n, d, num_classes) + x.astype("<f4").tobytes()


def write_dataset(dataset: Dataset, directory) -> None:
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "features.tfv").write_bytes(encode_features(dataset.inputs, dataset.num_classes))
        (directory / "given_labels.tlb").write_bytes(_encode_labels(dataset.given_labels))
        truth = directory / "true_labels.tlb"
        if dataset.true_labels is not None:
            truth.write_bytes(_encode_labels(dataset.true_labels))
        elif truth.exists():
            truth.unlink()
        (directory / "meta.txt").write_text(
            f"kind = {dataset.kind}\nclasses = {dataset.num_classes}\n"
            f"rows = {len(dataset)}\ndim = {dataset.dim}\n"
        )
    except OSError as exc:
        raise DataError(f"{directory}: {exc}") from exc


def _read_meta(path: Path) -> dict[str, str]:
    meta = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataError(f"{path}: malformed line {line!r}")
        meta[key.strip()] = value.strip()
    for key in ("kind", "classes"):
        if key not in meta:
            raise DataError(f"{path}: missing key {key!r}")
    return meta


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    try:
        meta = _read_meta(directory / "meta.txt")
        blob = (directory / "features.tfv").read_bytes()
        given_blob = (directory / "given_labels.tlb").read_bytes()
        truth_path = directory / "true_labels.tlb"
        truth_blob = truth_path.read_bytes() if truth_path.exists() else None
    except OSError as exc:
        raise DataError(f"{directory}: {exc}") from exc

    if len(blob) < 32 or blob[:8] != FEATURE_MAGIC:
        raise DataError(f"{directory / 'features.tfv'}: unrecognized format")
    n, d, c = struct.unpack("<QQQ", blob[8:32])
    if len(blob) != 32 + 4 * n * d:
        raise DataError(f"{directory / 'features.tfv'}: header says {n}x{d}, payload size differs")
    x = np.frombuffer(blob, dtype="<f4", offset=32).astype(np.float64).reshape(n, d)

    try:
        classes = int(meta["classes"])
    except ValueError as exc:
        raise DataError(f"{directory / 'meta.txt'}: classes is not an integer") from exc
    if c and c != classes:
        raise DataError(f"{directory}: class count {c} in features.tfv, {classes} in meta.txt")
    if meta["kind"] not in KINDS:
        raise DataError(f"{directory / 'meta.txt'}: unknown kind {meta['kind']!r}")

    given = _decode_labels(given_blob, directory / "given_labels.tlb")
    truth = _decode_labels(truth_blob, truth_path) if truth_blob is not None else None
    for name, labels in (("given_labels", given), ("true_labels", truth)):
        if labels is not None and labels.size != n:
            raise DataError(f"{directory}: {name} has {labels.size} rows, features have {n}")
    if np.any(given == UNKNOWN_LABEL):
        raise DataError(f"{directory}: given labels may not be unknown")
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{directory / 'features.tfv'}: non-finite feature")
    return Dataset(x, given, truth, classes, meta["kind"])
