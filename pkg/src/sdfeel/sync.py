"""Synchronous semi-decentralized training and the baseline schemes.

Client models are held as the rows of a ``C x M`` array; edge-server models
as the rows of a ``D x M`` array.  Per iteration every participating client
takes one SGD step; every ``tau1`` iterations each server averages its
clients with weights ``m_hat``; every ``tau1 * tau2`` iterations the servers
additionally run ``alpha`` gossip rounds with the mixing matrix.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DivergenceError
from .latency import LatencyParams, sync_compute_time, sync_schedule_times
from .models import BatchSampler, ClientData, SoftmaxRegression, local_gradients
from .rng import stream
from .topology import ServerGraph, build_mixing, weighted_deviation
from .trace import RunTrace, TraceRecord

logger = logging.getLogger(__name__)

SYNC_SCHEMES = ("sdfeel", "hierfavg", "fedavg", "feel")
CONSENSUS_TOL = 1e-9
CONSENSUS_MAX_ROUNDS = 200


@dataclass(frozen=True)
class SyncConfig:
    """Schedule and optimizer settings for a synchronous run.

    Attributes
    ----------
    tau1, tau2, alpha : int
        Intra-cluster period, inter/intra period ratio and gossip rounds.
    eta : float
        Learning rate.
    K : int
        Iterations; must be a multiple of ``tau1 * tau2``.
    batch_size : int or None
        Mini-batch size; ``None`` uses full shards.
    speeds : tuple of float or None
        Device FLOPS; the slowest sets the per-iteration compute time.
    """

    tau1: int = 1
    tau2: int = 1
    alpha: int = 1
    eta: float = 0.001
    K: int = 100
    scheme: str = "sdfeel"
    seed: int = 0
    batch_size: int | None = 10
    feel_participants: int = 5
    latency: LatencyParams = field(default_factory=LatencyParams)
    speeds: tuple | None = None
    record_models: bool = False

    def __post_init__(self):
        if min(self.tau1, self.tau2, self.alpha) < 1:
            raise ConfigurationError("tau1, tau2 and alpha must be positive integers")
        if self.K < 1 or self.K % (self.tau1 * self.tau2):
            raise ConfigurationError(f"K={self.K} must be a positive multiple of tau1*tau2={self.tau1 * self.tau2}")
        if not self.eta >= 0:
            raise ConfigurationError("learning rate must be non-negative")
        if self.scheme not in SYNC_SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; expected one of {SYNC_SCHEMES}")
        if self.feel_participants < 1:
            raise ConfigurationError("FEEL needs at least one participant per round")

    def replace(self, **changes) -> "SyncConfig":
        from dataclasses import replace

        return replace(self, **changes)


def cluster_matrix(partition) -> np.ndarray:
    """``D x C`` matrix whose row ``d`` holds ``m_hat_i`` for the clients of cluster ``d``."""
    a = np.zeros((partition.clusters, partition.clients))
    a[partition.client_to_cluster, np.arange(partition.clients)] = partition.m_hat
    return a


def _check_weights(graph: ServerGraph, partition) -> None:
    if graph.d != partition.clusters:
        raise ConfigurationError(f"graph has {graph.d} servers but the partition has {partition.clusters} clusters")
    if np.max(np.abs(graph.cluster_weights - partition.m_tilde)) > 1e-12:
        raise ConfigurationError("graph cluster weights differ from the partition's cluster data ratios")


def check_learning_rate(cfg: SyncConfig, bound_inputs=None) -> bool | None:
    """Evaluate the learning-rate conditions when analysis inputs are available."""
    if bound_inputs is None:
        logger.warning("learning-rate conditions not checked: no smoothness/variance estimates supplied")
        return None
    from .theory import eval_sync_bound

    feasible = eval_sync_bound(bound_inputs).lr_feasible
    if not feasible:
        logger.warning("learning rate %g violates the convergence conditions", cfg.eta)
    return feasible


class _Evaluator:
    def __init__(self, model, dataset, test):
        self.model = model
        self.x, self.y = dataset.features, dataset.labels
        self.test = test

    def __call__(self, w, k):
        loss = self.model.loss(w, self.x, self.y)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite global loss at iteration {k}", k)
        acc = float("nan") if self.test is None else self.model.accuracy(w, self.test.features, self.test.labels)
        return loss, acc


def _max_deviation(servers: np.ndarray, weights: np.ndarray) -> float:
    mean = weights @ servers
    return float(np.max(np.linalg.norm(servers - mean, axis=1)))


def consensus_phase(servers: np.ndarray, p: np.ndarray, tol: float = CONSENSUS_TOL,
                    max_rounds: int = CONSENSUS_MAX_ROUNDS) -> tuple[np.ndarray, int, float]:
    """Gossip ``D x M`` server models until the max pairwise distance is below ``tol``."""
    y = np.array(servers, dtype=np.float64)
    pt = np.asarray(p).T
    rounds = 0
    dist = _pairwise_max(y)
    while dist >= tol and rounds < max_rounds:
        y = pt @ y
        rounds += 1
        dist = _pairwise_max(y)
    return y, rounds, dist


def _pairwise_max(y: np.ndarray) -> float:
    if y.shape[0] < 2:
        return 0.0
    diff = y[:, None, :] - y[None, :, :]
    return float(np.sqrt(np.max(np.sum(diff * diff, axis=2))))


def run_sync(cfg: SyncConfig, graph: ServerGraph | None, partition, dataset, model=None, test=None,
             bound_inputs=None) -> RunTrace:
    """Run any synchronous scheme; see :func:`run_sdfeel` and the baseline wrappers."""
    model = model or SoftmaxRegression(dataset.feature_dim, dataset.num_classes)
    scheme = cfg.scheme
    if scheme in ("sdfeel", "hierfavg"):
        if graph is None:
            raise ConfigurationError(f"scheme {scheme!r} needs a server graph")
        _check_weights(graph, partition)
    if scheme == "sdfeel":
        check_learning_rate(cfg, bound_inputs)

    data = ClientData(dataset, partition)
    sampler = BatchSampler(cfg.seed, partition.sizes, cfg.batch_size)
    evaluate = _Evaluator(model, dataset, test)
    n_clients = partition.clients
    m = partition.m
    a = cluster_matrix(partition)
    cmap = partition.client_to_cluster
    m_tilde = partition.m_tilde
    pt = build_mixing(graph).p.T if scheme == "sdfeel" else None

    t_comp = sync_compute_time(cfg.latency, cfg.speeds)
    clock = sync_schedule_times(scheme, cfg.latency, cfg.K, cfg.tau1, cfg.tau2, cfg.alpha, t_comp)

    w0 = model.init_params(cfg.seed)
    w = np.tile(w0, (n_clients, 1))
    servers = np.tile(w0, (partition.clusters, 1))
    trace = RunTrace(scheme)
    participants = np.arange(n_clients)

    for k in range(1, cfg.K + 1):
        if scheme == "feel" and (k - 1) % cfg.tau1 == 0:
            rnd = (k - 1) // cfg.tau1
            size = min(cfg.feel_participants, n_clients)
            participants = np.sort(stream(cfg.seed, "feel", rnd).choice(n_clients, size=size, replace=False))
        grads = local_gradients(model, w[participants], data, sampler, k, participants)
        if cfg.record_models:
            full = np.zeros_like(w)
            full[participants] = grads
            trace.gradients.append(full)
        w[participants] = w[participants] - cfg.eta * grads
        if not np.all(np.isfinite(w)):
            raise DivergenceError(f"non-finite client model at iteration {k}", k)

        event = "local"
        if k % cfg.tau1 == 0:
            inter = k % (cfg.tau1 * cfg.tau2) == 0
            if scheme == "fedavg":
                w[:] = m @ w
                servers[:] = w[0]
                event = "inter"
            elif scheme == "feel":
                w[:] = w[participants].mean(axis=0)
                servers[:] = w[0]
                event = "intra"
            else:
                servers = a @ w
                event = "intra"
                if inter:
                    before = weighted_deviation(servers.T, m_tilde)
                    if scheme == "sdfeel":
                        for _ in range(cfg.alpha):
                            servers = pt @ servers
                    else:
                        servers = np.tile(m_tilde @ servers, (partition.clusters, 1))
                    trace.gossip_deviation.append((k, before, weighted_deviation(servers.T, m_tilde)))
                    event = "inter"
                w = servers[cmap].copy()

        u = w[participants].mean(axis=0) if scheme == "feel" else m @ w
        loss, acc = evaluate(u, k)
        trace.records.append(
            TraceRecord(k, float(clock[k - 1]), loss, acc, _max_deviation(servers, m_tilde), event)
        )
        if cfg.record_models:
            trace.models.append(w.copy())
            trace.server_models.append(servers.copy())

    if scheme == "sdfeel":
        final, rounds, dist = consensus_phase(servers, pt.T)
        trace.consensus_rounds, trace.consensus_distance = rounds, dist
        trace.final_model = m_tilde @ servers
    elif scheme == "feel":
        trace.final_model = w[participants].mean(axis=0)
    else:
        trace.final_model = m @ w
    trace.extras["w0"] = w0
    return trace


def run_sdfeel(cfg: SyncConfig, graph: ServerGraph, partition, dataset, model=None, test=None,
               bound_inputs=None) -> RunTrace:
    """Synchronous semi-decentralized training with intra-cluster averaging and ``alpha``-round gossip."""
    return run_sync(cfg.replace(scheme="sdfeel"), graph, partition, dataset, model, test, bound_inputs)


def run_hierfavg(cfg: SyncConfig, graph: ServerGraph, partition, dataset, model=None, test=None) -> RunTrace:
    """Hierarchical averaging: the gossip step is replaced by exact averaging through the cloud."""
    return run_sync(cfg.replace(scheme="hierfavg"), graph, partition, dataset, model, test)


def run_fedavg(cfg: SyncConfig, partition, dataset, model=None, test=None) -> RunTrace:
    """All clients averaged through the cloud every ``tau1`` iterations."""
    return run_sync(cfg.replace(scheme="fedavg"), None, partition, dataset, model, test)


def run_feel(cfg: SyncConfig, partition, dataset, model=None, test=None) -> RunTrace:
    """Single edge server scheduling ``feel_participants`` random clients per round."""
    return run_sync(cfg.replace(scheme="feel"), None, partition, dataset, model, test)


def transition_matrices(partition, p: np.ndarray, alpha: int):
    """``V`` (C x D), ``B`` (D x C) and the two non-identity transitions ``VB`` and ``V P^alpha B``."""
    c, d = partition.clients, partition.clusters
    v = np.zeros((c, d))
    b = np.zeros((d, c))
    for i in range(c):
        cl = int(partition.client_to_cluster[i])
        v[i, cl] = partition.m_hat[i]
        b[cl, i] = 1.0
    p_alpha = np.linalg.matrix_power(np.asarray(p, dtype=np.float64), alpha)
    return v, b, v @ b, v @ p_alpha @ b


def matrix_oracle(cfg: SyncConfig, graph: ServerGraph, partition, dataset, model=None) -> RunTrace:
    """Reference trajectory from ``W_{k+1} = (W_k - eta G_k) T_k`` in ``M x C`` column storage.

    Gradients are evaluated one client at a time with the same batch keys as
    :func:`run_sdfeel`; ``trace.models`` holds ``C x M`` snapshots for comparison.
    """
    model = model or SoftmaxRegression(dataset.feature_dim, dataset.num_classes)
    _check_weights(graph, partition)
    mix = build_mixing(graph)
    _, _, vb, vpb = transition_matrices(partition, mix.p, cfg.alpha)
    eye = np.eye(partition.clients)
    data = ClientData(dataset, partition)
    sampler = BatchSampler(cfg.seed, partition.sizes, cfg.batch_size)
    m = partition.m

    w0 = model.init_params(cfg.seed)
    wmat = np.repeat(w0[:, None], partition.clients, axis=1)
    trace = RunTrace("oracle")
    for k in range(1, cfg.K + 1):
        gmat = np.empty_like(wmat)
        for i in range(partition.clients):
            idx = sampler.draw_one(i, k)
            gmat[:, i] = model.grad(wmat[:, i], data.x[i][idx], data.y[i][idx])
        if k % (cfg.tau1 * cfg.tau2) == 0:
            t_k, event = vpb, "inter"
        elif k % cfg.tau1 == 0:
            t_k, event = vb, "intra"
        else:
            t_k, event = eye, "local"
        wmat = (wmat - cfg.eta * gmat) @ t_k
        if not np.all(np.isfinite(wmat)):
            raise DivergenceError(f"non-finite client model at iteration {k}", k)
        u = wmat @ m
        trace.records.append(TraceRecord(k, float("nan"), model.loss(u, dataset.features, dataset.labels),
                                         float("nan"), float("nan"), event))
        trace.models.append(wmat.T.copy())
        trace.gradients.append(gmat.T.copy())
    trace.final_model = wmat @ m
    return trace


def max_oracle_gap(a: RunTrace, b: RunTrace) -> float:
    """Largest absolute difference between two traces' client models over all iterations."""
    if len(a.models) != len(b.models) or not a.models:
        raise ConfigurationError("both traces must record the same number of model snapshots")
    return max(float(np.max(np.abs(x - y))) for x, y in zip(a.models, b.models))
