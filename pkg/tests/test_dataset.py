import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from turnlnl.dataset import (
    UNKNOWN_LABEL,
    Dataset,
    SplitSpec,
    SyntheticSpec,
    class_means,
    generate_synthetic,
    read_dataset,
    split,
    write_dataset,
)
from turnlnl.errors import ConfigError, DataError, NumericError
from turnlnl.model import identity_extractor, init_head
from turnlnl.optim import SgdConfig, make_optimizer, train_epoch
from turnlnl.pipeline import evaluate


def _random_dataset(n=40, d=6, c=4, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d)).astype(np.float32).astype(np.float64)
    y = rng.integers(0, c, n)
    return Dataset(x, y, rng.integers(0, c, n), c, "feature")


# --- persistence


def test_feature_file_bytes(tmp_path):
    write_dataset(Dataset(np.array([[1.0, 2.0]]), [0], None, 3, "feature"), tmp_path)
    blob = (tmp_path / "features.tfv").read_bytes()
    expected = (
        bytes.fromhex("54 55 52 4E 46 56 30 31")
        + (1).to_bytes(8, "little") + (2).to_bytes(8, "little") + (3).to_bytes(8, "little")
        + bytes.fromhex("00 00 80 3F 00 00 00 40")
    )
    assert blob == expected


def test_label_file_bytes(tmp_path):
    write_dataset(Dataset(np.zeros((2, 1)), [1, 0], [UNKNOWN_LABEL, 0], 2), tmp_path)
    blob = (tmp_path / "true_labels.tlb").read_bytes()
    assert blob == b"TURNLB01" + struct.pack("<Q", 2) + bytes.fromhex("FFFFFFFF 00000000")


def test_roundtrip_large_bitwise(tmp_path):
    d = _random_dataset(1000, 64, 10)
    write_dataset(d, tmp_path)
    back = read_dataset(tmp_path)
    assert back.equals(d)
    assert back.inputs.astype("<f4").tobytes() == d.inputs.astype("<f4").tobytes()


@settings(max_examples=100, deadline=None)
@given(
    st.integers(0, 12), st.integers(1, 5), st.integers(1, 6), st.booleans(),
    st.sampled_from(["raw", "feature"]), st.integers(0, 2**32 - 1),
)
def test_roundtrip_property(tmp_path_factory, n, d, c, with_truth, kind, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=100, size=(n, d)).astype(np.float32).astype(np.float64)
    truth = None
    if with_truth:
        truth = rng.integers(-1, c, n)  # -1 marks unknown
    ds = Dataset(x, rng.integers(0, c, n), truth, c, kind)
    path = tmp_path_factory.mktemp("rt")
    write_dataset(ds, path)
    assert read_dataset(path).equals(ds)


def test_empty_roundtrip(tmp_path):
    ds = Dataset(np.zeros((0, 3)), [], [], 2)
    write_dataset(ds, tmp_path)
    back = read_dataset(tmp_path)
    assert len(back) == 0 and back.dim == 3


def test_corrupt_magic(tmp_path):
    write_dataset(_random_dataset(), tmp_path)
    p = tmp_path / "features.tfv"
    blob = bytearray(p.read_bytes())
    blob[3] ^= 0xFF
    p.write_bytes(bytes(blob))
    with pytest.raises(DataError, match="unrecognized format"):
        read_dataset(tmp_path)


def test_unknown_true_label_sentinel(tmp_path):
    ds = _random_dataset()
    write_dataset(ds, tmp_path)
    p = tmp_path / "true_labels.tlb"
    blob = bytearray(p.read_bytes())
    blob[16:20] = b"\xff\xff\xff\xff"
    p.write_bytes(bytes(blob))
    back = read_dataset(tmp_path)
    assert back.true_labels[0] == UNKNOWN_LABEL
    assert_array_equal(back.true_labels[1:], ds.true_labels[1:])


def test_row_count_mismatch(tmp_path):
    write_dataset(_random_dataset(10), tmp_path)
    (tmp_path / "given_labels.tlb").write_bytes(b"TURNLB01" + struct.pack("<Q", 9) + bytes(36))
    with pytest.raises(DataError, match="rows"):
        read_dataset(tmp_path)


def test_label_out_of_range(tmp_path):
    write_dataset(_random_dataset(5, c=4), tmp_path)
    (tmp_path / "given_labels.tlb").write_bytes(b"TURNLB01" + struct.pack("<Q", 5) + struct.pack("<5I", 0, 1, 4, 0, 0))
    with pytest.raises(DataError):
        read_dataset(tmp_path)


def test_nonfinite_feature(tmp_path):
    write_dataset(_random_dataset(3, 2), tmp_path)
    p = tmp_path / "features.tfv"
    blob = bytearray(p.read_bytes())
    blob[32:36] = struct.pack("<f", float("nan"))
    p.write_bytes(bytes(blob))
    with pytest.raises(NumericError):
        read_dataset(tmp_path)


def test_missing_directory(tmp_path):
    with pytest.raises(DataError):
        read_dataset(tmp_path / "nope")


def test_construction_checks():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1)), [0, 3], None, 3)
    with pytest.raises(NumericError):
        Dataset(np.array([[np.inf]]), [0], None, 1)
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1)), [0], None, 1)


# --- synthetic generation


def test_balanced_counts():
    train, test, pre = generate_synthetic(SyntheticSpec(3, 4, 5, 2, 7, 1.0))
    assert len(train) == 15
    assert_array_equal(np.bincount(train.given_labels), [5, 5, 5])
    assert_array_equal(np.bincount(test.given_labels), [2, 2, 2])
    assert_array_equal(np.bincount(pre.given_labels), [7, 7, 7])
    assert_array_equal(train.true_labels, train.given_labels)


def test_generation_deterministic():
    spec = SyntheticSpec(4, 8, 10, 5, 5, 2.0, seed=11)
    for a, b in zip(generate_synthetic(spec), generate_synthetic(spec)):
        assert a.equals(b)
    other = generate_synthetic(SyntheticSpec(4, 8, 10, 5, 5, 2.0, seed=12))[0]
    assert not other.equals(generate_synthetic(spec)[0])


def test_zero_separation_means_coincide():
    assert not np.any(class_means(SyntheticSpec(separation=0.0)))


def test_zero_separation_is_at_chance():
    C = 10
    train, test, _ = generate_synthetic(SyntheticSpec(C, 16, 200, 200, 1, 0.0, seed=3))
    ext, head = identity_extractor(16), init_head(16, C, 0)
    opt = make_optimizer(SgdConfig(lr=1e-2))
    for e in range(5):
        train_epoch(ext, head, train.inputs, train.given_labels, "ce", opt, 64, seed=e, mode="LP")
    assert abs(evaluate(ext, head, test) - 1 / C) <= 0.05


def test_separation_controls_difficulty():
    accs = []
    for sep in (0.5, 3.0):
        train, test, _ = generate_synthetic(SyntheticSpec(5, 16, 200, 200, 1, sep))
        ext, head = identity_extractor(16), init_head(16, 5, 0)
        opt = make_optimizer(SgdConfig(lr=1e-2))
        for e in range(5):
            train_epoch(ext, head, train.inputs, train.given_labels, "ce", opt, 64, seed=e, mode="LP")
        accs.append(evaluate(ext, head, test))
    assert accs[1] > accs[0] + 0.2


@pytest.mark.parametrize("kw", [{"separation": -1.0}, {"per_class_train": 0}, {"num_classes": 0}])
def test_invalid_spec(kw):
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticSpec(**kw))


# --- split


def test_split_stratified():
    ds = Dataset(np.arange(100.0)[:, None], np.repeat([0, 1], 50), None, 2)
    tr, va = split(ds, SplitSpec(0.1, seed=4))
    assert_array_equal(np.bincount(va.given_labels), [5, 5])
    assert len(tr) == 90
    assert_array_equal(np.sort(np.r_[tr.inputs[:, 0], va.inputs[:, 0]]), np.arange(100.0))


def test_split_fraction_zero():
    ds = _random_dataset()
    tr, va = split(ds, SplitSpec(0.0))
    assert len(va) == 0
    assert tr.equals(ds)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 200), st.floats(0.0, 0.9), st.integers(0, 1000))
def test_split_partitions_rows(n, frac, seed):
    ds = Dataset(np.arange(float(n))[:, None], np.arange(n) % 3, None, 3)
    tr, va = split(ds, SplitSpec(frac, seed))
    ids = np.r_[tr.inputs[:, 0], va.inputs[:, 0]]
    assert_array_equal(np.sort(ids), np.arange(float(n)))
    a, b = split(ds, SplitSpec(frac, seed))
    assert a.equals(tr) and b.equals(va)


def test_split_small_class_warns(caplog):
    ds = Dataset(np.zeros((12, 1)), [0] * 10 + [1] * 2, None, 2)
    with caplog.at_level("WARNING"):
        _, va = split(ds, SplitSpec(0.2))
    assert_array_equal(va.given_labels, [0, 0])
    assert "too few rows" in caplog.text


def test_split_rejects_bad_input():
    with pytest.raises(ConfigError):
        split(_random_dataset(), SplitSpec(1.0))
    with pytest.raises(ConfigError):
        split(Dataset(np.zeros((0, 2)), [], None, 2), SplitSpec(0.1))
