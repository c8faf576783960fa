"""Stand-in pre-trained extractor and linear head with manual backprop.

The extractor is one of

* ``mlp``: ``f(x) = W2 relu(W1 x + b1) + b2``
* ``residual_adapter``: ``f(x) = x + W2 relu(W1 x + b1) + b2`` (W2 zero at init)
* ``identity``: ``f(x) = x``

and the head is ``g(z) = W z + b``. In LP mode only the head receives
gradients; in FFT mode both do.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericError

EXTRACTOR_MODES = ("mlp", "residual_adapter", "identity")
TUNING_MODES = ("LP", "FFT")
MODEL_MAGIC = b"TURNMD01"


def _check_mode(mode: str) -> str:
    mode = mode.upper()
    if mode not in TUNING_MODES:
        raise ConfigError(f"tuning mode must be LP or FFT, got {mode!r}")
    return mode


@dataclass(eq=False)
class LinearHead:
    W: np.ndarray
    b: np.ndarray
    version: int = field(default=0, repr=False)

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"head.W": self.W, "head.b": self.b}

    def copy(self) -> "LinearHead":
        return copy.deepcopy(self)


@dataclass(eq=False)
class Extractor:
    mode: str
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    in_dim: int = 0
    version: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.mode not in EXTRACTOR_MODES:
            raise ConfigError(f"extractor mode must be one of {EXTRACTOR_MODES}")
        if self.mode == "identity":
            if not self.in_dim:
                raise ConfigError("identity extractor needs in_dim")
        else:
            self.in_dim = self.W1.shape[1]
            if self.mode == "residual_adapter" and self.W2.shape[0] != self.in_dim:
                raise ConfigError("residual adapter needs feature_dim == input_dim")

    @property
    def out_dim(self) -> int:
        return self.in_dim if self.mode == "identity" else self.W2.shape[0]

    @property
    def hidden(self) -> int:
        return 0 if self.mode == "identity" else self.W1.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        if self.mode == "identity":
            return {}
        return {"ext.W1": self.W1, "ext.b1": self.b1, "ext.W2": self.W2, "ext.b2": self.b2}

    def copy(self) -> "Extractor":
        return copy.deepcopy(self)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return extract(self, x)


def identity_extractor(dim: int) -> Extractor:
    e = np.empty((0, dim))
    return Extractor("identity", e, np.empty(0), np.empty((dim, 0)), np.zeros(dim), in_dim=dim)


def _fan_in_uniform(rng, fan_out, fan_in):
    bound = np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_extractor(L: int, H: int, F: int, seed: int, mode: str = "mlp") -> Extractor:
    if mode == "identity":
        return identity_extractor(L)
    if min(L, H, F) < 1:
        raise ConfigError("extractor dimensions must be positive")
    rng = np.random.default_rng([seed, 101])
    W1 = _fan_in_uniform(rng, H, L)
    W2 = _fan_in_uniform(rng, F, H)
    if mode == "residual_adapter":
        W2 = np.zeros((F, H))
    return Extractor(mode, W1, np.zeros(H), W2, np.zeros(F))


def init_head(F: int, C: int, seed: int, zero: bool = True) -> LinearHead:
    if zero:
        return LinearHead(np.zeros((C, F)), np.zeros(C))
    rng = np.random.default_rng([seed, 102])
    return LinearHead(_fan_in_uniform(rng, C, F), np.zeros(C))


def init_model(L: int, H: int, F: int, C: int, seed: int, mode: str = "mlp", zero_head: bool = True):
    return init_extractor(L, H, F, seed, mode), init_head(F if mode != "identity" else L, C, seed, zero_head)


# --------------------------------------------------------------------- passes


@dataclass
class Cache:
    x: np.ndarray
    pre: np.ndarray | None
    hidden: np.ndarray | None
    features: np.ndarray
    extractor: Extractor
    head: LinearHead
    versions: tuple[int, int]
    mode: str


def _ext_forward(ext: Extractor, x: np.ndarray):
    if ext.mode == "identity":
        return None, None, x
    pre = x @ ext.W1.T + ext.b1
    h = np.maximum(pre, 0.0)
    z = h @ ext.W2.T + ext.b2
    if ext.mode == "residual_adapter":
        z = z + x
    return pre, h, z


def extract(ext: Extractor, x: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != ext.in_dim:
        raise ValueError(f"input width {x.shape[1]} != extractor input {ext.in_dim}")
    if ext.mode == "identity":
        return x.copy()
    return np.concatenate(
        [_ext_forward(ext, x[i : i + batch_size])[2] for i in range(0, len(x), batch_size)]
    ) if len(x) else np.empty((0, ext.out_dim))


def forward(ext: Extractor, head: LinearHead, x, mode: str = "FFT"):
    mode = _check_mode(mode)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != ext.in_dim:
        raise ValueError(f"input width {x.shape[-1]} != extractor input {ext.in_dim}")
    if head.W.shape[1] != ext.out_dim:
        raise ValueError("head width does not match extractor output")
    pre, h, z = _ext_forward(ext, x)
    logits = z @ head.W.T + head.b
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    return logits, Cache(x, pre, h, z, ext, head, (ext.version, head.version), mode)


def backward(cache: Cache, dlogits, mode: str | None = None) -> dict[str, np.ndarray]:
    """Gradients of the batch-mean loss given per-sample logit gradients.

    LP returns head gradients only; FFT adds the extractor's.
    """
    mode = _check_mode(mode or cache.mode)
    ext, head = cache.extractor, cache.head
    if (ext.version, head.version) != cache.versions:
        raise ValueError("stale cache: parameters changed since forward")
    d = np.asarray(dlogits, dtype=np.float64) / max(len(cache.x), 1)
    grads = {"head.W": d.T @ cache.features, "head.b": d.sum(axis=0)}
    if mode == "LP" or ext.mode == "identity":
        return grads
    dz = d @ head.W
    grads["ext.W2"] = dz.T @ cache.hidden
    grads["ext.b2"] = dz.sum(axis=0)
    dpre = (dz @ ext.W2) * (cache.pre > 0)
    grads["ext.W1"] = dpre.T @ cache.x
    grads["ext.b1"] = dpre.sum(axis=0)
    return grads


def predict(ext: Extractor, head: LinearHead, x, batch_size: int = 4096) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = [forward(ext, head, x[i : i + batch_size])[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.empty((0, head.num_classes))


# ---------------------------------------------------------------- checkpoints

_MODE_BYTE = {"mlp": 0, "residual_adapter": 1, "identity": 2}


def save_model(ext: Extractor, head: LinearHead, path) -> None:
    L, H, F, C = ext.in_dim, ext.hidden, ext.out_dim, head.num_classes
    blob = [MODEL_MAGIC, struct.pack("<QQQQ", L, H, F, C), bytes([_MODE_BYTE[ext.mode]])]
    for arr in (ext.W1, ext.b1, ext.W2, ext.b2, head.W, head.b):
        blob.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    try:
        Path(path).write_bytes(b"".join(blob))
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc


def load_model(path) -> tuple[Extractor, LinearHead]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if len(blob) < 41 or blob[:8] != MODEL_MAGIC:
        raise DataError(f"{path}: unrecognized format")
    L, H, F, C = struct.unpack("<QQQQ", blob[8:40])
    modes = {v: k for k, v in _MODE_BYTE.items()}
    if blob[40] not in modes:
        raise DataError(f"{path}: unknown extractor mode byte {blob[40]}")
    mode = modes[blob[40]]
    shapes = [(H, L), (H,), (F, H), (F,), (C, F), (C,)]
    need = 41 + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(blob) != need:
        raise DataError(f"{path}: expected {need} bytes, found {len(blob)}")
    arrays, off = [], 41
    for s in shapes:
        k = int(np.prod(s))
        arrays.append(np.frombuffer(blob, dtype="<f8", count=k, offset=off).reshape(s).copy())
        off += 8 * k
    ext = Extractor(mode, *arrays[:4], in_dim=L)
    return ext, LinearHead(arrays[4], arrays[5])


# ---------------------------------------------------------------- pretraining


def pretrain_extractor(ext: Extractor, head: LinearHead | None, data, epochs: int, optimizer_config, seed: int,
                       batch_size: int = 128) -> Extractor:
    """Fit extractor plus a throw-away head with cross entropy on clean data.

    Returns a trained copy of ``ext``; the inputs are not modified.
    """
    from .optim import make_optimizer, train_epoch

    if len(data) == 0:
        raise ConfigError("pretraining split is empty")
    ext = ext.copy()
    if epochs <= 0:
        return ext
    head = head.copy() if head is not None else init_head(ext.out_dim, data.num_classes, seed, zero=True)
    opt = make_optimizer(optimizer_config)
    for epoch in range(epochs):
        train_epoch(ext, head, data.inputs, data.given_labels, "ce", opt, batch_size,
                    seed=[seed, 7, epoch], mode="FFT")
    return ext
