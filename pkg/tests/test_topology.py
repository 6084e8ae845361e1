from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdfeel.exceptions import ConfigurationError
from sdfeel.numerics import operator_norm
from sdfeel.topology import (
    build_mixing,
    build_staleness_mixing,
    consensus_round,
    constant_psi,
    deviation,
    graph_from_edges,
    make_graph,
    make_psi,
    parse_edge_list,
    rho_sequence,
    rho_table,
    weighted_deviation,
)


def random_graph(seed: int, d: int, skewed: bool = True):
    """Random spanning tree plus random extra edges, random cluster weights."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(d)
    edges = {tuple(sorted((int(order[i]), int(order[rng.integers(i)])))) for i in range(1, d)}
    for i in range(d):
        for j in range(i + 1, d):
            if rng.random() < 0.3:
                edges.add((i, j))
    w = rng.dirichlet(np.ones(d)) + 0.01 if skewed else np.ones(d)
    return graph_from_edges(d, sorted(edges), w / w.sum())


@pytest.mark.parametrize("kind,zeta", [("ring", 0.6), ("star", 5 / 7), ("partial", 1 / 3), ("full", 0.0)])
def test_uniform_six_server_spectral_gaps(kind, zeta):
    mix = build_mixing(make_graph(kind, 6))
    assert abs(mix.zeta - zeta) < 1e-9
    assert abs(mix.zeta_op - zeta) < 1e-9


def test_ring_mixing_matrix_entries():
    # uniform ring of 6: L Omega^-1 = 6 L has extreme non-zero eigenvalues 24 and 6
    lap = make_graph("ring", 6).laplacian()
    p = build_mixing(make_graph("ring", 6)).p
    np.testing.assert_allclose(p, np.eye(6) - (2 / (24 + 6)) * lap * 6, atol=1e-12)


def test_single_server_is_identity():
    mix = build_mixing(make_graph("ring", 1))
    assert mix.p.shape == (1, 1) and mix.p[0, 0] == 1.0 and mix.zeta == 0.0


def test_graph_validation_errors():
    with pytest.raises(ConfigurationError, match="disconnected"):
        graph_from_edges(4, [(0, 1), (2, 3)])
    with pytest.raises(ConfigurationError):
        graph_from_edges(3, [(0, 0)])
    with pytest.raises(ConfigurationError):
        graph_from_edges(3, [(0, 5)])
    with pytest.raises(ConfigurationError, match="sum to 1"):
        make_graph("ring", 3, weights=[0.5, 0.5, 0.5])
    with pytest.raises(ConfigurationError):
        make_graph("partial", 5)
    with pytest.raises(ConfigurationError):
        make_graph("torus", 5)


def test_parse_edge_list():
    assert parse_edge_list("0-1, 1-2,") == [(0, 1), (1, 2)]
    with pytest.raises(ConfigurationError):
        parse_edge_list("0:1")


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 9))
def test_mixing_preserves_weighted_mean_and_mass(seed, d):
    g = random_graph(seed, d)
    mix = build_mixing(g)
    w = g.cluster_weights
    np.testing.assert_allclose(np.ones(d) @ mix.p, np.ones(d), atol=1e-12)
    np.testing.assert_allclose(mix.p @ w, w, atol=1e-12)
    assert 0 <= mix.zeta < 1


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 9), st.integers(1, 4))
def test_consensus_round_contracts(seed, d, m):
    g = random_graph(seed, d)
    mix = build_mixing(g)
    w = g.cluster_weights
    y = np.random.default_rng(seed + 1).normal(size=(m, d))
    out = consensus_round(y, mix)
    np.testing.assert_allclose(out @ w, y @ w, atol=1e-12)
    assert weighted_deviation(out, w) <= mix.zeta * weighted_deviation(y, w) + 1e-9
    assert deviation(out, w) <= mix.zeta_op * deviation(y, w) + 1e-9


def test_zeta_op_can_exceed_one_for_skewed_weights():
    w = np.array([0.4, 0.3, 0.1, 0.05, 0.05, 0.02, 0.02, 0.02, 0.02, 0.02])
    mix = build_mixing(make_graph("ring", 10, weights=w))
    assert mix.zeta < 1
    assert mix.zeta_op > 1


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 9))
def test_staleness_mixing_doubly_stochastic(seed, d):
    g = random_graph(seed, d)
    rng = np.random.default_rng(seed)
    trigger = int(rng.integers(d))
    gaps = [int(x) for x in rng.integers(0, 6, size=d)]
    gaps[trigger] = 0
    p = build_staleness_mixing(g, trigger, gaps).p_t
    np.testing.assert_allclose(p.sum(axis=0), 1, atol=1e-12)
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-12)
    assert np.all(p >= 0)
    outside = [j for j in range(d) if j not in g.closed_neighborhood(trigger)]
    for j in outside:
        assert p[j, j] == 1.0


def test_staleness_mixing_worked_values():
    # path 0-1-2, trigger 1, neighbour 0 is two iterations stale
    g = make_graph("path", 3)
    p = build_staleness_mixing(g, 1, {0: 2, 1: 0, 2: 0}).p_t
    psi = [1 / 6, 1 / 2, 1 / 2]
    total = sum(psi)
    np.testing.assert_allclose(p[:, 1], np.array(psi) / total, atol=1e-15)
    assert abs(p[0, 0] - (1 - psi[0] / total)) < 1e-15
    assert abs(p[1, 0] - psi[0] / total) < 1e-15


def test_staleness_mixing_rejects_bad_inputs():
    g = make_graph("ring", 4)
    with pytest.raises(ConfigurationError):
        build_staleness_mixing(g, 7, [0] * 4)
    with pytest.raises(ConfigurationError):
        build_staleness_mixing(g, 0, [0] * 3)
    with pytest.raises(ConfigurationError, match="missing"):
        build_staleness_mixing(g, 0, {0: 0})
    with pytest.raises(ConfigurationError, match="non-increasing"):
        build_staleness_mixing(g, 0, [0, 2, 0, 0], psi=lambda k: 1.0 + k)
    with pytest.raises(ConfigurationError):
        make_psi("exponential")
    assert make_psi("constant") is constant_psi


def test_rho_sequence_matches_direct_products():
    g = random_graph(3, 5)
    w = g.cluster_weights
    rng = np.random.default_rng(0)
    mixes = [build_staleness_mixing(g, int(rng.integers(5)), [0] * 5).p_t for _ in range(6)]
    seq = rho_sequence(mixes, w)
    avg = np.outer(w, np.ones(5))
    for s in range(6):
        prod = np.eye(5)
        for p in mixes[s:]:
            prod = prod @ p
        assert abs(seq[s] - operator_norm(prod - avg)) < 1e-12
    table = rho_table(mixes, w)
    np.testing.assert_allclose(np.diag(table), [operator_norm(p - avg) for p in mixes], atol=1e-12)
    np.testing.assert_allclose(table[:, -1], seq, atol=1e-12)
