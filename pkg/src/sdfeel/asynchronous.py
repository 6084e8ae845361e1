"""Asynchronous semi-decentralized training over a simulated clock.

Each edge cluster ``d`` repeats iterations of fixed length ``T_iter[d]``:
its clients run ``theta_i`` local SGD steps from the cluster's last
broadcast model, the server folds their normalized updates into its current
model, mixes with its neighbours through a staleness-aware matrix and
broadcasts.  Completions are processed in time order, ties by ascending
cluster id, and every completion advances the global counter ``t``.

Iteration gap convention: when cluster ``d`` completes at time ``now``, the
gap of a neighbour ``j`` is the number of completions strictly between
``j``'s own last completion and ``now``; the trigger's gap is 0.
"""
from __future__ import annotations

import bisect
import heapq
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DivergenceError
from .latency import LatencyParams, async_iteration_times
from .models import BatchSampler, ClientData, SoftmaxRegression
from .sync import _check_weights, _max_deviation, consensus_phase
from .topology import ServerGraph, build_mixing, build_staleness_mixing, make_psi
from .trace import RunTrace, TraceRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClientProfile:
    """Compute speed ``h_i`` of one client, in FLOPS."""

    speed: float

    def __post_init__(self):
        if not self.speed > 0:
            raise ConfigurationError("client speed must be positive")


def heterogeneity_gap(profiles) -> float:
    speeds = np.array([p.speed for p in profiles])
    return float(speeds.max() / speeds.min())


def make_profiles(clients: int, gap: float, seed: int, base_speed: float = 10e9) -> list[ClientProfile]:
    """Speeds spread log-uniformly over ``[base, gap * base]``, extremes included."""
    from .rng import stream

    if gap < 1:
        raise ConfigurationError("heterogeneity gap must be >= 1")
    if clients == 1:
        return [ClientProfile(base_speed)]
    u = stream(seed, "speeds").random(clients)
    u[np.argmin(u)], u[np.argmax(u)] = 0.0, 1.0
    return [ClientProfile(base_speed * gap ** float(x)) for x in u]


@dataclass(frozen=True)
class AsyncConfig:
    """Deadlines, epoch bounds and optimizer settings for an asynchronous run.

    Attributes
    ----------
    deadlines : tuple of float
        Per-cluster compute deadline ``T_comp^(d)`` in seconds.
    theta_min, theta_max : int
        Bounds on local steps per iteration.
    T : int
        Global iteration budget (completions across all clusters).
    beta_c : float or None
        Steps per FLOP-second; ``None`` uses ``1 / latency.n_mac``.
    hops : int
        Server-to-server transfers charged per iteration.
    iter_times : tuple of float or None
        Explicit per-cluster iteration lengths, bypassing the latency model.
    """

    deadlines: tuple
    theta_min: int = 1
    theta_max: int = 20
    eta: float = 0.001
    psi: str = "reciprocal"
    T: int = 100
    seed: int = 0
    batch_size: int | None = 10
    beta_c: float | None = None
    latency: LatencyParams = field(default_factory=LatencyParams)
    hops: int = 1
    record_models: bool = False
    record_mixing: bool = False
    iter_times: tuple | None = None

    def __post_init__(self):
        d = tuple(float(x) for x in self.deadlines)
        if not d or any(not x > 0 for x in d):
            raise ConfigurationError("compute deadlines must be positive")
        object.__setattr__(self, "deadlines", d)
        if not 1 <= self.theta_min <= self.theta_max:
            raise ConfigurationError("need 1 <= theta_min <= theta_max")
        if self.T < 1:
            raise ConfigurationError("iteration budget T must be positive")
        if not self.eta >= 0:
            raise ConfigurationError("learning rate must be non-negative")
        make_psi(self.psi)

    def iteration_times(self) -> np.ndarray:
        if self.iter_times is not None:
            times = np.asarray(self.iter_times, dtype=np.float64)
            if times.shape != (len(self.deadlines),) or np.any(times <= 0):
                raise ConfigurationError("explicit iteration times must be positive, one per cluster")
            return times
        return async_iteration_times(self.latency, self.deadlines, self.hops)


def delta_max(iter_times) -> int:
    """``sum_d (ceil(T_slow / T_d) - 1)`` over all clusters."""
    times = np.asarray(iter_times, dtype=np.float64)
    if times.size == 0 or np.any(times <= 0):
        raise ConfigurationError("iteration times must be positive")
    slow = float(times.max())
    return int(sum(math.ceil(slow / float(t) - 1e-9) - 1 for t in times))


def local_steps(profiles, client_to_cluster, cfg: AsyncConfig) -> np.ndarray:
    """``theta_i = clamp(round(h_i beta_c T_comp^(d)), theta_min, theta_max)``."""
    beta = cfg.beta_c if cfg.beta_c is not None else 1.0 / cfg.latency.n_mac
    raw = np.array([round(p.speed * beta * cfg.deadlines[int(d)]) for p, d in zip(profiles, client_to_cluster)])
    theta = np.clip(raw, cfg.theta_min, cfg.theta_max).astype(np.int64)
    clamped = int(np.sum(theta != raw))
    if clamped:
        logger.info("clamped local steps for %d of %d clients into [%d, %d]",
                    clamped, theta.size, cfg.theta_min, cfg.theta_max)
    return theta


def local_update_async(model, w0, x, y, theta: int, eta: float, batches=None) -> tuple[np.ndarray, np.ndarray]:
    """Run ``theta`` SGD steps from ``w0``; return ``(Delta, w_theta)`` with ``Delta = (w_theta - w0) / theta``.

    ``batches`` lists the local sample indices of each step; ``None`` uses the full shard.
    """
    if theta < 1:
        raise ConfigurationError("theta must be at least 1")
    w = np.array(w0, dtype=np.float64)
    for s in range(theta):
        idx = slice(None) if batches is None else batches[s]
        w = w - eta * model.grad(w, x[idx], y[idx])
    if not np.all(np.isfinite(w)):
        raise DivergenceError("non-finite local model")
    return (w - w0) / theta, w


def intra_aggregate_async(y_t, updates, weights, thetas) -> np.ndarray:
    """``y_t + theta_bar * sum_i m_hat_i Delta_i`` with ``theta_bar = sum_i m_hat_i theta_i``."""
    weights = np.asarray(weights, dtype=np.float64)
    if abs(float(weights.sum()) - 1.0) > 1e-12:
        raise ConfigurationError("intra-cluster weights must sum to 1")
    theta_bar = float(weights @ np.asarray(thetas, dtype=np.float64))
    return np.asarray(y_t, dtype=np.float64) + theta_bar * (weights @ np.asarray(updates, dtype=np.float64))


def inter_aggregate_async(trigger: int, models: np.ndarray, p_t: np.ndarray, graph: ServerGraph) -> np.ndarray:
    """Mix the trigger's closed neighbourhood of ``D x M`` server models with ``P_t``.

    Returns a new array; rows outside the neighbourhood are copied unchanged.
    """
    models = np.asarray(models, dtype=np.float64)
    out = models.copy()
    hood = graph.closed_neighborhood(trigger)
    p_t = np.asarray(p_t, dtype=np.float64)
    for j in hood:
        out[j] = p_t[hood, j] @ models[hood]
    return out


class _GapBook:
    """Completion-time log answering "how many completions strictly inside (a, b)"."""

    def __init__(self, d: int):
        self.times: list[float] = []
        self.last = [0.0] * d

    def gap(self, j: int, now: float) -> int:
        if self.last[j] >= now:
            return 0
        return bisect.bisect_left(self.times, now) - bisect.bisect_right(self.times, self.last[j])

    def complete(self, d: int, now: float) -> None:
        self.times.append(now)
        self.last[d] = now


def run_async(cfg: AsyncConfig, graph: ServerGraph, partition, dataset, profiles, model=None, test=None) -> RunTrace:
    """Event-driven asynchronous training; returns a trace with one record per completion."""
    model = model or SoftmaxRegression(dataset.feature_dim, dataset.num_classes)
    _check_weights(graph, partition)
    d_count = graph.d
    if len(cfg.deadlines) != d_count:
        raise ConfigurationError(f"{len(cfg.deadlines)} deadlines for {d_count} clusters")
    if len(profiles) != partition.clients:
        raise ConfigurationError(f"{len(profiles)} client profiles for {partition.clients} clients")
    psi = make_psi(cfg.psi)
    iter_times = cfg.iteration_times()
    bound = delta_max(iter_times)
    theta = local_steps(profiles, partition.client_to_cluster, cfg)
    members = [np.array(partition.members(d)) for d in range(d_count)]
    m_hat = partition.m_hat
    m_tilde = partition.m_tilde
    theta_bar = np.array([float(m_hat[c] @ theta[c]) for c in members])

    data = ClientData(dataset, partition)
    sampler = BatchSampler(cfg.seed, partition.sizes, cfg.batch_size)
    steps_done = np.zeros(partition.clients, dtype=np.int64)
    x_eval, y_eval = dataset.features, dataset.labels

    w0 = model.init_params(cfg.seed)
    servers = np.tile(w0, (d_count, 1))
    base = servers.copy()
    rounds = np.zeros(d_count, dtype=np.int64)
    queue = [(float(iter_times[d]), d) for d in range(d_count)]
    heapq.heapify(queue)
    book = _GapBook(d_count)
    trace = RunTrace("async")
    violations = 0
    observed_max = 0

    for t in range(1, cfg.T + 1):
        now, d = heapq.heappop(queue)
        hood = graph.closed_neighborhood(d)
        gaps = {j: (0 if j == d else book.gap(j, now)) for j in hood}
        worst = max(gaps.values())
        observed_max = max(observed_max, worst)
        if worst > bound:
            violations += 1
            logger.warning("iteration gap %d exceeds the bound %d at t=%d", worst, bound, t)

        clients = members[d]
        start = base[d].copy()
        w = np.tile(start, (clients.size, 1))
        for s in range(int(theta[clients].max())):
            active = clients[theta[clients] > s]
            rows = np.flatnonzero(theta[clients] > s)
            if cfg.batch_size is None:
                grads = np.stack([model.grad(w[r], data.x[i], data.y[i]) for r, i in zip(rows, active)])
            else:
                idx = np.stack([sampler.draw_one(int(i), int(steps_done[i]) + s + 1) for i in active])
                xs, ys = data.gather(idx, active)
                grads = model.stacked_grad(w[rows], xs, ys)
            w[rows] = w[rows] - cfg.eta * grads
        steps_done[clients] += theta[clients]
        if not np.all(np.isfinite(w)):
            raise DivergenceError(f"non-finite client model at t={t}", t)
        deltas = (w - start) / theta[clients][:, None]

        y_hat = servers.copy()
        y_hat[d] = intra_aggregate_async(servers[d], deltas, m_hat[clients], theta[clients])
        mix = build_staleness_mixing(graph, d, gaps, psi)
        servers = inter_aggregate_async(d, y_hat, mix.p_t, graph)
        base[d] = servers[d]
        book.complete(d, now)
        rounds[d] += 1
        heapq.heappush(queue, (float(rounds[d] + 1) * float(iter_times[d]), d))

        u = m_tilde @ servers
        loss = model.loss(u, x_eval, y_eval)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite global loss at t={t}", t)
        acc = float("nan") if test is None else model.accuracy(u, test.features, test.labels)
        trace.records.append(TraceRecord(t, now, loss, acc, _max_deviation(servers, m_tilde), "inter",
                                         d, worst, float(theta_bar[d])))
        if cfg.record_models:
            trace.server_models.append(servers.copy())
            trace.models.append({"trigger": d, "start": start, "y_hat": y_hat[d].copy(), "local": w.copy(),
                                 "deltas": deltas, "theta": theta[clients].copy()})
        if cfg.record_mixing:
            trace.extras.setdefault("mixes", []).append(np.array(mix.p_t))

    static = build_mixing(graph).p
    _, crounds, dist = consensus_phase(servers, static)
    trace.consensus_rounds, trace.consensus_distance = crounds, dist
    trace.final_model = m_tilde @ servers
    trace.extras.update(
        w0=w0,
        theta=theta,
        iter_times=iter_times,
        delta_max=bound,
        observed_max_gap=observed_max,
        gap_violations=violations,
        steps_done=steps_done,
    )
    return trace
