from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdfeel.data import (
    Dataset,
    Partition,
    assign_clusters,
    load_idx,
    parse_idx_images,
    parse_idx_labels,
    partition,
    partition_dirichlet,
    partition_iid,
    partition_label_skew,
    sample_dirichlet,
    synth_dataset,
    write_idx,
)
from sdfeel.exceptions import ConfigurationError, ParseError
from sdfeel.rng import stream

# two 2x3 images, labels 7 and 2, written out byte by byte
IMAGES = bytes([0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3,
                0, 51, 102, 153, 204, 255,
                255, 0, 0, 0, 0, 1])
LABELS = bytes([0, 0, 8, 1, 0, 0, 0, 2, 7, 2])


def _write(tmp_path, images=IMAGES, labels=LABELS):
    (tmp_path / "img").write_bytes(images)
    (tmp_path / "lab").write_bytes(labels)
    return tmp_path / "img", tmp_path / "lab"


def test_idx_fixture_decodes(tmp_path):
    ds = load_idx(*_write(tmp_path))
    assert len(ds) == 2 and ds.feature_dim == 6 and ds.num_classes == 8
    np.testing.assert_array_equal(ds.features[0], [0, 0.2, 0.4, 0.6, 0.8, 1.0])
    np.testing.assert_array_equal(ds.features[1], [1.0, 0, 0, 0, 0, 1 / 255])
    np.testing.assert_array_equal(ds.labels, [7, 2])


def test_idx_round_trip_is_bit_exact(tmp_path):
    raw = parse_idx_images(IMAGES).reshape(2, 2, 3)
    write_idx(tmp_path / "a", tmp_path / "b", raw, parse_idx_labels(LABELS))
    assert (tmp_path / "a").read_bytes() == IMAGES
    assert (tmp_path / "b").read_bytes() == LABELS


def test_idx_wrong_magic(tmp_path):
    with pytest.raises(ParseError, match="wrong magic") as err:
        load_idx(*_write(tmp_path, images=bytes([0, 0, 8, 1]) + IMAGES[4:]))
    assert err.value.offset == 0


def test_idx_truncated(tmp_path):
    with pytest.raises(ParseError, match="truncated") as err:
        load_idx(*_write(tmp_path, images=IMAGES[:-1]))
    assert err.value.offset == len(IMAGES) - 1
    with pytest.raises(ParseError, match="offset"):
        parse_idx_labels(LABELS[:5])


def test_idx_count_mismatch(tmp_path):
    labels = bytes([0, 0, 8, 1, 0, 0, 0, 3, 7, 2, 1])
    with pytest.raises(ParseError, match="count mismatch") as err:
        load_idx(*_write(tmp_path, labels=labels))
    assert err.value.offset == 4


def test_idx_trailing_bytes():
    with pytest.raises(ParseError, match="trailing"):
        parse_idx_images(IMAGES + b"\x00")


def test_dataset_validation():
    with pytest.raises(ConfigurationError, match="every class"):
        partition_label_skew(Dataset(np.zeros((2, 1)), np.array([0, 0]), 2), 2, 1)
    with pytest.raises(ConfigurationError):
        Dataset(np.zeros((2, 1)), np.array([0, 5]), 2)
    with pytest.raises(ConfigurationError):
        Dataset(np.zeros(2), np.array([0, 1]), 2)


def test_synth_dataset_is_deterministic_and_test_draw_differs():
    a = synth_dataset(3, 10, 4, seed=5)
    b = synth_dataset(3, 10, 4, seed=5)
    c = synth_dataset(3, 10, 4, seed=5, draw=1)
    np.testing.assert_array_equal(a.features, b.features)
    assert not np.array_equal(a.features, c.features)
    # same class means, so class centroids of the two draws stay close
    for k in range(3):
        gap = a.features[a.labels == k].mean(0) - c.features[c.labels == k].mean(0)
        assert np.linalg.norm(gap) < 2.0


def _check_cover(part: Partition, n: int):
    pooled = np.sort(np.concatenate(part.assignment))
    np.testing.assert_array_equal(pooled, np.arange(n))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 5), st.integers(2, 20))
def test_label_skew_properties(seed, c, clients):
    ds = synth_dataset(5, 40, 2, seed=1)
    if clients * c < 5:
        with pytest.raises(ConfigurationError):
            partition_label_skew(ds, clients, c, seed)
        return
    part = partition_label_skew(ds, clients, c, seed)
    _check_cover(part, len(ds))
    hist = part.label_histogram(ds.labels, 5)
    assert np.all((hist > 0).sum(axis=1) == c)
    # each class splits evenly among its holders
    for k in range(5):
        held = hist[:, k][hist[:, k] > 0]
        assert held.max() - held.min() <= 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.05, 10.0), st.integers(2, 15))
def test_dirichlet_properties(seed, beta, clients):
    ds = synth_dataset(4, 30, 2, seed=2)
    part = partition_dirichlet(ds, clients, beta, seed)
    _check_cover(part, len(ds))
    assert part.clients == clients and np.all(part.sizes > 0)


def test_dirichlet_sampler_moments():
    # Dir(beta) on K cells: mean 1/K, variance (1/K)(1 - 1/K)/(K beta + 1)
    k, beta, n = 5, 0.5, 40_000
    rng = stream(0, "test-dirichlet")
    draws = np.stack([sample_dirichlet(beta, k, rng) for _ in range(n)])
    np.testing.assert_allclose(draws.sum(axis=1), 1, atol=1e-12)
    np.testing.assert_allclose(draws.mean(axis=0), 1 / k, atol=0.01)
    var = (1 / k) * (1 - 1 / k) / (k * beta + 1)
    np.testing.assert_allclose(draws.var(axis=0), var, rtol=0.05)


def test_small_beta_is_more_skewed_than_large():
    ds = synth_dataset(10, 50, 2, seed=3)

    def mean_entropy(beta):
        hist = partition_dirichlet(ds, 10, beta, 0).label_histogram(ds.labels, 10).astype(float)
        p = hist / hist.sum(axis=1, keepdims=True)
        return float(np.mean(-np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1)), 0), axis=1)))

    assert mean_entropy(0.1) < mean_entropy(100.0)


def test_iid_partition_sizes_and_errors():
    ds = synth_dataset(3, 10, 2, seed=0)
    part = partition_iid(ds, 4, 0)
    _check_cover(part, 30)
    assert part.sizes.max() - part.sizes.min() <= 1
    with pytest.raises(ConfigurationError):
        partition_iid(ds, 31, 0)
    with pytest.raises(ConfigurationError, match="unknown partition"):
        partition(ds, "pathological", 3, 0)
    with pytest.raises(ConfigurationError):
        partition_dirichlet(ds, 3, 0.0, 0)


def test_partition_weights():
    part = Partition(([0, 1], [2], [3, 4, 5]), np.array([0, 0, 1]))
    np.testing.assert_allclose(part.m, [2 / 6, 1 / 6, 3 / 6])
    np.testing.assert_allclose(part.m_hat, [2 / 3, 1 / 3, 1.0])
    np.testing.assert_allclose(part.m_tilde, [0.5, 0.5])
    assert part.members(0) == [0, 1]
    with pytest.raises(ConfigurationError, match="overlap"):
        Partition(([0, 1], [1]))
    with pytest.raises(ConfigurationError, match="no clients"):
        Partition(([0], [1]), np.array([0, 2]))
    with pytest.raises(ConfigurationError, match="no samples"):
        Partition(([0], []))


@pytest.mark.parametrize("gamma", [0, 1, 2, 3, 4])
def test_cluster_sizes_with_imbalance(gamma):
    cmap = assign_clusters(50, 10, gamma, seed=gamma)
    sizes = sorted(np.bincount(cmap, minlength=10).tolist())
    assert sizes == sorted([5] * 4 + [5 - gamma] * 3 + [5 + gamma] * 3)


def test_cluster_assignment_errors_and_round_robin():
    with pytest.raises(ConfigurationError):
        assign_clusters(50, 10, 5)
    with pytest.raises(ConfigurationError):
        assign_clusters(12, 3, 1)
    with pytest.raises(ConfigurationError):
        assign_clusters(2, 3)
    np.testing.assert_array_equal(assign_clusters(6, 3), [0, 1, 2, 0, 1, 2])
