"""Wall-clock model: computation from FLOP counts, communication from link rates.

Every total is ``K`` times a per-iteration cost in which a hop that happens
once every ``n`` iterations contributes ``hop_time / n``.  Downlink broadcast
is folded into the client-server upload term.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .exceptions import ConfigurationError

MNIST_N_MAC = 487.54e3
CIFAR_N_MAC = 138.4e6
SCHEMES = ("sdfeel", "hierfavg", "fedavg", "feel", "async")


@dataclass(frozen=True)
class LatencyParams:
    """Compute rate, model size and link rates; defaults are the MNIST setup.

    Attributes
    ----------
    n_mac : float
        FLOPs per local iteration.
    c_cpu : float
        Device compute rate in FLOPS.
    m_bit : float
        Model size in bits.
    r_ct_sr, r_sr_sr, r_sr_cd, r_ct_cd : float
        Client-server, server-server, server-cloud and client-cloud rates in bit/s.
    """

    n_mac: float = MNIST_N_MAC
    c_cpu: float = 10e9
    m_bit: float = 32e6
    r_ct_sr: float = 5e6
    r_sr_sr: float = 50e6
    r_sr_cd: float = 5e6
    r_ct_cd: float = 2.5e6

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigurationError(f"latency.{f.name} must be a positive number, got {v!r}")

    @property
    def t_comp(self) -> float:
        return self.n_mac / self.c_cpu

    @property
    def t_ct_sr(self) -> float:
        return self.m_bit / self.r_ct_sr

    @property
    def t_sr_sr(self) -> float:
        return self.m_bit / self.r_sr_sr

    @property
    def t_sr_cd(self) -> float:
        return self.m_bit / self.r_sr_cd

    @property
    def t_ct_cd(self) -> float:
        return self.m_bit / self.r_ct_cd

    def to_dict(self) -> dict:
        return asdict(self)


def sync_compute_time(params: LatencyParams, speeds=None) -> float:
    """Per-iteration compute time; a synchronous round waits for the slowest device."""
    if speeds is None:
        return params.t_comp
    speeds = np.asarray(speeds, dtype=np.float64)
    if speeds.size == 0 or np.any(speeds <= 0):
        raise ConfigurationError("device speeds must be positive")
    return params.n_mac / float(speeds.min())


def _check_schedule(k: int, tau1: int, tau2: int = 1, alpha: int = 1) -> None:
    if k < 0 or min(tau1, tau2, alpha) < 1:
        raise ConfigurationError("need K >= 0 and tau1, tau2, alpha >= 1")


def sdfeel_total(params: LatencyParams, k: int, tau1: int, tau2: int, alpha: int, t_comp: float | None = None) -> float:
    """``K (T_comp + T_ct-sr / tau1 + alpha T_sr-sr / (tau1 tau2))``."""
    _check_schedule(k, tau1, tau2, alpha)
    t = params.t_comp if t_comp is None else t_comp
    return k * (t + params.t_ct_sr / tau1 + alpha * params.t_sr_sr / (tau1 * tau2))


def per_iteration(scheme: str, params: LatencyParams, tau1: int = 1, tau2: int = 1, alpha: int = 1,
                  t_comp: float | None = None) -> float:
    """Average seconds per training iteration for a synchronous scheme."""
    _check_schedule(0, tau1, tau2, alpha)
    t = params.t_comp if t_comp is None else t_comp
    if scheme == "sdfeel":
        return t + params.t_ct_sr / tau1 + alpha * params.t_sr_sr / (tau1 * tau2)
    if scheme == "hierfavg":
        return t + params.t_ct_sr / tau1 + params.t_sr_cd / (tau1 * tau2)
    if scheme == "fedavg":
        return t + params.t_ct_cd / tau1
    if scheme == "feel":
        return t + params.t_ct_sr / tau1
    raise ConfigurationError(f"unknown synchronous scheme {scheme!r}")


def scheme_total(scheme: str, params: LatencyParams, k: int = 0, tau1: int = 1, tau2: int = 1, alpha: int = 1,
                 t_comp=None, hops: int = 1):
    """Total latency of ``k`` iterations, or per-cluster iteration times for ``async``.

    For ``async``, ``t_comp`` is the sequence of per-cluster compute deadlines
    and the result is ``T_comp^(d) + T_ct-sr + hops * T_sr-sr`` per cluster.
    """
    if scheme == "async":
        if t_comp is None:
            raise ConfigurationError("async latency needs per-cluster compute deadlines")
        return async_iteration_times(params, t_comp, hops)
    _check_schedule(k, tau1, tau2, alpha)
    return k * per_iteration(scheme, params, tau1, tau2, alpha, t_comp)


def async_iteration_times(params: LatencyParams, deadlines, hops: int = 1) -> np.ndarray:
    """``T_iter^(d) = T_comp^(d) + T_ct-sr + hops * T_sr-sr``."""
    deadlines = np.asarray(deadlines, dtype=np.float64)
    if deadlines.ndim != 1 or np.any(deadlines <= 0):
        raise ConfigurationError("compute deadlines must be positive")
    if hops < 0:
        raise ConfigurationError("hop count must be non-negative")
    return deadlines + params.t_ct_sr + hops * params.t_sr_sr


def sync_schedule_times(scheme: str, params: LatencyParams, k: int, tau1: int, tau2: int = 1, alpha: int = 1,
                        t_comp: float | None = None) -> np.ndarray:
    """Simulated wall clock after each of iterations ``1..k``.

    Communication is charged at the iteration on which it happens, so the
    clock at ``k`` equals :func:`scheme_total` whenever ``tau1 tau2`` divides ``k``.
    """
    _check_schedule(k, tau1, tau2, alpha)
    t = params.t_comp if t_comp is None else t_comp
    steps = np.arange(1, k + 1)
    cost = np.full(k, t)
    intra = steps % tau1 == 0
    inter = steps % (tau1 * tau2) == 0
    if scheme == "sdfeel":
        cost = cost + intra * params.t_ct_sr + inter * alpha * params.t_sr_sr
    elif scheme == "hierfavg":
        cost = cost + intra * params.t_ct_sr + inter * params.t_sr_cd
    elif scheme == "fedavg":
        cost = cost + intra * params.t_ct_cd
    elif scheme == "feel":
        cost = cost + intra * params.t_ct_sr
    else:
        raise ConfigurationError(f"unknown synchronous scheme {scheme!r}")
    return np.cumsum(cost)
