import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy.stats import chisquare

from turnlnl.dataset import Dataset
from turnlnl.errors import ConfigError
from turnlnl.noise import (
    CIFAR100_SUPERCLASSES,
    NoiseSpec,
    inject,
    inject_asymmetric,
    inject_instance,
    inject_symmetric,
    instance_transition,
    parse_groups,
    sample_flip_rates,
    successor_map,
)


def _clean(n_per_class, C, d=4, seed=0, kind="raw"):
    labels = np.repeat(np.arange(C), n_per_class)
    x = np.random.default_rng(seed).normal(size=(labels.size, d))
    return Dataset(x, labels, labels.copy(), C, kind)


# --- symmetric


def test_symmetric_ratio_zero():
    ds = _clean(10, 3)
    nd = inject_symmetric(ds, 0.0, 1)
    assert_array_equal(nd.dataset.given_labels, ds.true_labels)
    assert not nd.flip_mask.any()


def test_symmetric_ratio_one_flips_all():
    nd = inject_symmetric(_clean(20, 3), 1.0, 2)
    assert nd.flip_mask.all()


def test_symmetric_exact_count_and_uniform_targets():
    ds = _clean(100, 100)
    nd = inject_symmetric(ds, 0.6, 0)
    assert nd.flip_mask.sum() == 6000
    truth, noisy = ds.true_labels[nd.flip_mask], nd.dataset.given_labels[nd.flip_mask]
    offsets = (noisy - truth) % 100
    counts = np.bincount(offsets, minlength=100)
    assert counts[0] == 0
    assert chisquare(counts[1:]).pvalue > 0.001


def test_symmetric_identity_flip_option():
    ds = _clean(100, 2)
    nd = inject_symmetric(ds, 1.0, 0, allow_identity_flip=True)
    assert 0 < nd.flip_mask.sum() < 200


def test_symmetric_needs_two_classes():
    with pytest.raises(ConfigError):
        inject_symmetric(_clean(5, 1), 0.5, 0)
    assert not inject_symmetric(_clean(5, 1), 0.0, 0).flip_mask.any()


def test_needs_true_labels():
    ds = Dataset(np.zeros((4, 1)), [0, 1, 0, 1], None, 2)
    with pytest.raises(ConfigError):
        inject_symmetric(ds, 0.5, 0)


# --- asymmetric


def test_asymmetric_ratio_one_mapping():
    ds = _clean(3, 4)
    nd = inject_asymmetric(ds, [[0, 1], [2, 3]], 1.0, 0)
    assert_array_equal(nd.dataset.given_labels, np.array([1, 0, 3, 2])[ds.true_labels])


def test_asymmetric_ratio_zero():
    ds = _clean(3, 4)
    assert not inject_asymmetric(ds, [[0, 1], [2, 3]], 0.0, 0).flip_mask.any()


def test_asymmetric_exact_counts_to_successor():
    ds = _clean(500, 6)
    groups = [[0, 1, 2], [3, 4], [5]]
    nd = inject_asymmetric(ds, groups, 0.4, 3)
    succ = successor_map(groups, 6)
    for c in range(6):
        rows = ds.true_labels == c
        flips = nd.flip_mask & rows
        assert flips.sum() == (0 if c == 5 else 200)
        assert np.all(nd.dataset.given_labels[flips] == succ[c])


def test_asymmetric_missing_class():
    with pytest.raises(ConfigError):
        inject_asymmetric(_clean(3, 4), [[0, 1], [2]], 0.5, 0)


def test_cifar100_groups():
    groups = parse_groups("cifar100-super")
    assert len(groups) == 20 and all(len(g) == 5 for g in groups)
    assert sorted(c for g in groups for c in g) == list(range(100))
    assert groups is CIFAR100_SUPERCLASSES
    assert (4, 30, 55, 72, 95) in groups  # aquatic mammals


def test_parse_groups():
    assert parse_groups("[[0, 1], [2, 3]]") == ((0, 1), (2, 3))
    with pytest.raises(ConfigError):
        parse_groups("[[0, 1], [2")


# --- instance-dependent


def test_instance_zero_rate_floor():
    nd, draw = inject_instance(_clean(50, 4), 0.0, 0.0, 0)
    assert not nd.flip_mask.any()
    assert np.all(draw.flip_rates < 1e-9)


def test_instance_half_normal_mean():
    ds = _clean(12500, 4, d=8)
    nd, _ = inject_instance(ds, 0.0, 0.1, 5)
    assert abs(nd.flip_fraction - 0.1 * math.sqrt(2 / math.pi)) <= 0.01


def test_instance_matches_mean_rate():
    ds = _clean(2500, 10, d=8)
    nd, draw = inject_instance(ds, 0.4, 0.1, 7)
    n = len(ds)
    p = draw.flip_rates.mean()
    assert abs(nd.flip_mask.sum() - n * p) <= 3 * math.sqrt(n * p * (1 - p))


def test_instance_draw_shapes_and_range():
    ds = _clean(30, 5, d=6)
    nd, draw = inject_instance(ds, 0.5, 0.3, 1)
    assert draw.W.shape == (6, 5)
    assert np.all((draw.flip_rates >= 0) & (draw.flip_rates <= 1))


def test_instance_transition_rows():
    rng = np.random.default_rng(0)
    x, W = rng.normal(size=(20, 3)), rng.normal(size=(3, 4))
    truth, q = rng.integers(0, 4, 20), rng.random(20)
    P = instance_transition(x, truth, W, q)
    assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert_allclose(P[np.arange(20), truth], 1 - q)


def test_instance_rejects_feature_bundles():
    with pytest.raises(ConfigError):
        inject_instance(_clean(5, 2, kind="feature"), 0.2, 0.1, 0)


def test_flip_rate_sampler_bounds():
    q = sample_flip_rates(0.95, 0.5, 10000, np.random.default_rng(0))
    assert q.min() >= 0 and q.max() <= 1


# --- shared properties


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from(["none", "symmetric", "asymmetric", "instance"]),
    st.floats(0.0, 1.0), st.integers(0, 2**32 - 1),
)
def test_flip_mask_consistent_and_deterministic(kind, ratio, seed):
    ds = _clean(15, 4, d=3, seed=seed % 97)
    spec = NoiseSpec(kind, ratio, groups=((0, 1), (2, 3)), seed=seed)
    nd, _ = inject(ds, spec)
    assert_array_equal(nd.flip_mask, nd.dataset.given_labels != ds.true_labels)
    assert_array_equal(nd.dataset.true_labels, ds.true_labels)
    again, _ = inject(ds, spec)
    assert_array_equal(again.dataset.given_labels, nd.dataset.given_labels)
    if kind == "symmetric":
        assert nd.flip_mask.sum() == math.floor(ratio * len(ds) + 1e-9)


def test_spec_validation():
    with pytest.raises(ConfigError):
        NoiseSpec("symmetric", 1.5).validate()
    with pytest.raises(ConfigError):
        NoiseSpec("instance", 0.2, std=0.0).validate()
    with pytest.raises(ConfigError):
        NoiseSpec("asymmetric", 0.2).validate()
    with pytest.raises(ConfigError):
        NoiseSpec("pairflip", 0.2).validate()
