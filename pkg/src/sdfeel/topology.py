"""Edge-server graphs and the mixing matrices used for inter-cluster gossip.

Models held by the ``D`` edge servers are stored as the columns of an
``M x D`` matrix ``Y``; one gossip round is ``Y <- Y @ P``.  Every mixing
matrix produced here therefore has unit column sums and preserves the
cluster-weighted average ``Y @ m_tilde``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .exceptions import ConfigurationError
from .numerics import operator_norm, sym_eigenvalues

Psi = Callable[[int], float]

TOPOLOGY_KINDS = ("ring", "star", "full", "partial", "path", "edges")


@dataclass(frozen=True)
class ServerGraph:
    """Undirected, connected graph over edge servers plus cluster weights."""

    adjacency: np.ndarray
    cluster_weights: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        d = adj.shape[0]
        if adj.shape != (d, d):
            raise ConfigurationError(f"adjacency must be square, got {adj.shape}")
        if np.any(adj != adj.T):
            raise ConfigurationError("adjacency must be symmetric")
        if np.any(np.diag(adj)):
            raise ConfigurationError("adjacency must have an empty diagonal")
        w = np.asarray(self.cluster_weights, dtype=np.float64)
        if w.shape != (d,):
            raise ConfigurationError(f"need {d} cluster weights, got shape {w.shape}")
        if np.any(w <= 0):
            raise ConfigurationError("cluster weights must be positive")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ConfigurationError(f"cluster weights must sum to 1, got {w.sum()!r}")
        if not _is_connected(adj):
            raise ConfigurationError("server graph is disconnected (spectral gap would be 1)")
        adj.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "cluster_weights", w)

    @property
    def d(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, d: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[d])]

    def closed_neighborhood(self, d: int) -> list[int]:
        return sorted([d, *self.neighbors(d)])

    def laplacian(self) -> np.ndarray:
        adj = self.adjacency.astype(np.float64)
        return np.diag(adj.sum(axis=1)) - adj

    def edges(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(np.triu(self.adjacency))
        return [(int(i), int(j)) for i, j in zip(rows, cols)]

    def with_weights(self, weights) -> "ServerGraph":
        return ServerGraph(self.adjacency, np.asarray(weights, dtype=np.float64))


def _is_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    if n == 0:
        return False
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj[u]):
            if int(v) not in seen:
                seen.add(int(v))
                queue.append(int(v))
    return len(seen) == n


def _uniform(d: int) -> np.ndarray:
    return np.full(d, 1.0 / d)


def graph_from_edges(d: int, edges: Iterable[tuple[int, int]], weights=None) -> ServerGraph:
    adj = np.zeros((d, d), dtype=bool)
    for i, j in edges:
        i, j = int(i), int(j)
        if not (0 <= i < d and 0 <= j < d):
            raise ConfigurationError(f"edge ({i}, {j}) out of range for {d} servers")
        if i == j:
            raise ConfigurationError(f"self-loop on server {i}")
        adj[i, j] = adj[j, i] = True
    return ServerGraph(adj, _uniform(d) if weights is None else weights)


def ring_edges(d: int) -> list[tuple[int, int]]:
    if d == 2:
        return [(0, 1)]
    return [(i, (i + 1) % d) for i in range(d)] if d > 2 else []


def path_edges(d: int) -> list[tuple[int, int]]:
    return [(i, i + 1) for i in range(d - 1)]


def star_edges(d: int) -> list[tuple[int, int]]:
    return [(0, j) for j in range(1, d)]


def full_edges(d: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(d) for j in range(i + 1, d)]


def partial_edges(d: int) -> list[tuple[int, int]]:
    """Ring plus the long diagonals ``i -- i + d/2``; for six servers this is K(3,3)."""
    if d < 4 or d % 2:
        raise ConfigurationError("the 'partial' topology needs an even server count >= 4")
    return ring_edges(d) + [(i, i + d // 2) for i in range(d // 2)]


def make_graph(kind: str, servers: int, edges=None, weights=None) -> ServerGraph:
    """Build a named topology: ring, star, full, partial, path or explicit edges."""
    if servers < 1:
        raise ConfigurationError("need at least one edge server")
    builders = {
        "ring": ring_edges,
        "star": star_edges,
        "full": full_edges,
        "partial": partial_edges,
        "path": path_edges,
    }
    if kind == "edges":
        if edges is None:
            raise ConfigurationError("topology kind 'edges' needs an explicit edge list")
        edge_list = [tuple(e) for e in edges]
    elif kind in builders:
        edge_list = builders[kind](servers)
    else:
        raise ConfigurationError(f"unknown topology kind {kind!r}; expected one of {TOPOLOGY_KINDS}")
    return graph_from_edges(servers, edge_list, weights)


def parse_edge_list(text: str) -> list[tuple[int, int]]:
    """Parse ``"0-1,1-2"`` style edge lists."""
    edges = []
    for chunk in text.replace(" ", "").split(","):
        if not chunk:
            continue
        try:
            a, b = chunk.split("-")
            edges.append((int(a), int(b)))
        except ValueError:
            raise ConfigurationError(f"bad edge {chunk!r}; expected 'i-j'") from None
    return edges


@dataclass(frozen=True)
class MixingMatrix:
    """Weighted Laplacian mixing matrix and its spectral gap.

    ``zeta`` is the largest eigenvalue modulus of ``P`` once the stationary
    eigenvalue 1 is removed; one gossip round shrinks the cluster-weighted
    deviation (:func:`weighted_deviation`) by at least this factor.
    ``zeta_op`` is ``||P - m_tilde 1^T||_op``, the factor for the plain
    Frobenius deviation (:func:`deviation`).  They agree for uniform weights;
    with skewed weights ``zeta_op`` can exceed 1.
    """

    p: np.ndarray
    zeta: float
    zeta_op: float
    weights: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return self.p.shape[0]

    def averaging_matrix(self) -> np.ndarray:
        return averaging_matrix(self.weights)


def averaging_matrix(weights) -> np.ndarray:
    """Rank-one ``m 1^T``: ``Y @ averaging_matrix(m)`` puts the weighted mean in every column."""
    w = np.asarray(weights, dtype=np.float64)
    return np.outer(w, np.ones_like(w))


def build_mixing(graph: ServerGraph) -> MixingMatrix:
    """``P = I - 2 / (l_1 + l_{D-1}) * L Omega^-1`` for a connected server graph."""
    d = graph.d
    w = graph.cluster_weights
    if d == 1:
        return MixingMatrix(np.ones((1, 1)), 0.0, 0.0, w)
    lap = graph.laplacian()
    inv_sqrt = 1.0 / np.sqrt(w)
    # same spectrum as L Omega^-1, but symmetric
    sym = lap * inv_sqrt[:, None] * inv_sqrt[None, :]
    eig = sym_eigenvalues(sym)
    lam_1, lam_dm1 = eig[0], eig[d - 2]
    if lam_dm1 <= 1e-12:
        raise ConfigurationError("server graph is disconnected (spectral gap would be 1)")
    scale = 2.0 / (lam_1 + lam_dm1)
    p = np.eye(d) - scale * (lap / w[None, :])
    zeta = float(np.max(np.abs(1.0 - scale * eig[: d - 1])))
    zeta_op = operator_norm(p - averaging_matrix(w))
    p.setflags(write=False)
    return MixingMatrix(p, zeta, zeta_op, w)


def reciprocal_psi(gap: int) -> float:
    """Default staleness weight ``1 / (2 (gap + 1))``."""
    return 1.0 / (2.0 * (gap + 1.0))


def constant_psi(gap: int) -> float:
    return 1.0


def make_psi(name: str | Psi) -> Psi:
    if callable(name):
        return name
    table = {"reciprocal": reciprocal_psi, "constant": constant_psi}
    try:
        return table[name]
    except KeyError:
        raise ConfigurationError(f"unknown staleness weight {name!r}; expected {sorted(table)}") from None


@dataclass(frozen=True)
class StalenessMixing:
    p_t: np.ndarray
    trigger: int
    gaps: tuple[int, ...]


def build_staleness_mixing(
    graph: ServerGraph,
    trigger: int,
    gaps: Sequence[int] | Mapping[int, int],
    psi: Psi = reciprocal_psi,
) -> StalenessMixing:
    """Staleness-aware mixing matrix for one asynchronous aggregation.

    Only the trigger's closed neighbourhood is mixed: the trigger column holds
    ``psi(gap_i) / Psi`` for every ``i`` in the neighbourhood, each neighbour
    ``j`` keeps ``1 - p[d, j]`` of its own model, and servers outside the
    neighbourhood get identity columns.  ``gaps`` may be a length-``D``
    sequence or a mapping covering the neighbourhood.
    """
    d_count = graph.d
    if not 0 <= trigger < d_count:
        raise ConfigurationError(f"trigger {trigger} out of range for {d_count} servers")
    hood = graph.closed_neighborhood(trigger)
    if isinstance(gaps, Mapping):
        missing = [j for j in hood if j not in gaps]
        if missing:
            raise ConfigurationError(f"missing iteration gaps for servers {missing}")
        full_gaps = [int(gaps.get(j, 0)) for j in range(d_count)]
    else:
        full_gaps = [int(g) for g in gaps]
        if len(full_gaps) != d_count:
            raise ConfigurationError(f"need {d_count} gaps, got {len(full_gaps)}")
    if any(full_gaps[j] < 0 for j in hood):
        raise ConfigurationError("iteration gaps must be non-negative")

    top = max(full_gaps[j] for j in hood)
    values = [float(psi(x)) for x in range(top + 1)]
    if any(not np.isfinite(v) or v <= 0 for v in values):
        raise ConfigurationError("staleness weight must be positive on every observed gap")
    if any(b > a for a, b in zip(values, values[1:])):
        raise ConfigurationError("staleness weight must be non-increasing")

    weight = {j: values[full_gaps[j]] for j in hood}
    total = sum(weight[j] for j in hood)
    p = np.eye(d_count)
    for i in hood:
        p[i, trigger] = weight[i] / total
    for j in hood:
        if j == trigger:
            continue
        p[trigger, j] = p[j, trigger]
        p[j, j] = 1.0 - p[trigger, j]
    p.setflags(write=False)
    return StalenessMixing(p, trigger, tuple(full_gaps))


def consensus_round(models: np.ndarray, mix) -> np.ndarray:
    """One gossip round ``Y @ P`` on an ``M x D`` column-per-server matrix."""
    p = mix.p if isinstance(mix, MixingMatrix) else np.asarray(mix, dtype=np.float64)
    models = np.asarray(models, dtype=np.float64)
    if models.ndim != 2 or models.shape[1] != p.shape[0]:
        raise ConfigurationError(f"models {models.shape} do not match a {p.shape} mixing matrix")
    return models @ p


def deviation(models: np.ndarray, weights) -> float:
    """Frobenius norm of ``Y (I - m 1^T)``; contracts by ``zeta_op`` per round."""
    models = np.asarray(models, dtype=np.float64)
    mean = models @ np.asarray(weights, dtype=np.float64)
    return float(np.linalg.norm(models - mean[:, None]))


def weighted_deviation(models: np.ndarray, weights) -> float:
    """``sqrt(sum_d m_d ||y_d - y_bar||^2)``; contracts by ``zeta`` per round."""
    models = np.asarray(models, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    diff = models - (models @ w)[:, None]
    return float(np.sqrt(np.sum(w * np.sum(diff * diff, axis=0))))


def rho_sequence(mixes: Sequence[np.ndarray], weights) -> list[float]:
    """``||P_s P_{s+1} ... P_n - M||_op`` for every suffix ``s = 1..n``."""
    avg = averaging_matrix(weights)
    out = []
    prod = np.eye(avg.shape[0])
    for p in reversed(list(mixes)):
        prod = np.asarray(p, dtype=np.float64) @ prod
        out.append(operator_norm(prod - avg))
    return out[::-1]


def rho_table(mixes: Sequence[np.ndarray], weights) -> np.ndarray:
    """All interval products: ``R[s, e] = ||P_s ... P_e - M||_op`` for ``s <= e`` (0-based).

    Entries with ``s > e`` are NaN.
    """
    mats = [np.asarray(p, dtype=np.float64) for p in mixes]
    n = len(mats)
    avg = averaging_matrix(weights)
    table = np.full((n, n), np.nan)
    for e in range(n):
        prod = np.eye(avg.shape[0])
        for s in range(e, -1, -1):
            prod = mats[s] @ prod
            table[s, e] = operator_norm(prod - avg)
    return table
