"""Numerical evaluation of the convergence-bound expressions.

The synchronous bound depends on ``(tau1, tau2, alpha, zeta)`` through
``Lambda`` and ``V1``-``V3``; the asynchronous bound on ``theta_min``,
``theta_max``, ``delta_max`` and three sums over the consensus-status
sequence ``rho[s, e] = ||P_s ... P_e - M||_op``.  Infeasible learning rates
are flagged in the result rather than raised.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .exceptions import ConfigurationError
from .rng import stream
from .topology import rho_table


@dataclass(frozen=True)
class BoundInputs:
    """Analysis constants plus the schedule they are evaluated at.

    Attributes
    ----------
    L, sigma2, kappa2 : float
        Smoothness, gradient-variance and non-IID bounds.
    delta : float
        Initial optimality gap ``F(u_1) - F(u*)``.
    weights : tuple of float
        Client data ratios ``m_i``.
    theta_min, theta_max, delta_max, T : int
        Asynchronous-only inputs.
    """

    L: float = 1.0
    sigma2: float = 1.0
    kappa2: float = 1.0
    eta: float = 0.001
    tau1: int = 1
    tau2: int = 1
    alpha: int = 1
    zeta: float = 0.0
    weights: tuple = (1.0,)
    delta: float = 1.0
    K: int = 1000
    theta_min: int = 1
    theta_max: int = 1
    delta_max: int = 0
    T: int = 1000

    def __post_init__(self):
        for name in ("L", "sigma2", "kappa2", "eta", "delta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigurationError(f"bound input {name} must be finite and non-negative, got {v!r}")
        if not 0.0 <= self.zeta < 1.0:
            raise ConfigurationError(f"zeta must lie in [0, 1), got {self.zeta}")
        if min(self.tau1, self.tau2, self.alpha, self.K, self.T) < 1:
            raise ConfigurationError("tau1, tau2, alpha, K and T must be positive")
        if not 1 <= self.theta_min <= self.theta_max:
            raise ConfigurationError("need 1 <= theta_min <= theta_max")
        if self.delta_max < 0:
            raise ConfigurationError("delta_max must be non-negative")
        w = tuple(float(x) for x in self.weights)
        if not w or any(x < 0 for x in w):
            raise ConfigurationError("client weights must be non-negative")
        object.__setattr__(self, "weights", w)

    def with_(self, **changes) -> "BoundInputs":
        return replace(self, **changes)


@dataclass(frozen=True)
class RhoStats:
    """The three consensus-status sums used by the asynchronous bound."""

    s1: float
    s2: float
    s3: float
    mode: str


@dataclass
class BoundBreakdown:
    Lambda: float = math.nan
    V1: float = math.nan
    V2: float = math.nan
    V3: float = math.nan
    Phi0: float = math.nan
    Phi: float = math.nan
    theorem1_rhs: float = math.nan
    U1: float = math.nan
    U2: float = math.nan
    U3: float = math.nan
    U4: float = math.nan
    A: float = math.nan
    B: float = math.nan
    C: float = math.nan
    theorem2_rhs: float = math.nan
    lr_feasible: bool = False
    rho_mode: str = ""
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["notes"] = "; ".join(self.notes)
        return d


def lambda_const(zeta: float, alpha: int) -> float:
    za = zeta ** alpha
    return za * za / (1 - za * za) + 2 * za / (1 - za) + za * za / (1 - za) ** 2


def eval_sync_bound(inp: BoundInputs) -> BoundBreakdown:
    """Lambda, V1-V3, Phi0, Phi and the right-hand side of the synchronous bound."""
    out = BoundBreakdown()
    tau = inp.tau1 * inp.tau2
    za = inp.zeta ** inp.alpha
    e = (inp.eta * inp.L) ** 2
    out.Lambda = lambda_const(inp.zeta, inp.alpha)
    out.V3 = tau * (tau * out.Lambda + (tau - 1) / 2 * (2 - za) / (1 - za))
    out.Phi0 = sum(m * m for m in inp.weights) * inp.sigma2
    denom = 1 - 16 * e * out.V3
    if denom <= 0:
        out.notes.append("1 - 16 eta^2 L^2 V3 <= 0")
        return out
    out.V1 = (tau * za * za / (1 - za * za) + (tau - 1) / 2) / denom
    out.V2 = out.V3 / denom
    out.Phi = 2 * out.V1 * inp.sigma2 + 8 * out.V2 * inp.kappa2
    out.theorem1_rhs = 2 * inp.delta / (inp.eta * inp.K) + inp.eta * inp.L * out.Phi0 + e * out.Phi
    out.lr_feasible = 1 - inp.eta * inp.L - 8 * e * out.V2 >= 0
    if not out.lr_feasible:
        out.notes.append("1 - eta L - 8 eta^2 L^2 V2 < 0")
    return out


def phi_perfect_consensus(inp: BoundInputs) -> float:
    """Phi when one inter-cluster round reaches exact consensus (hierarchical averaging)."""
    tau = inp.tau1 * inp.tau2
    e = (inp.eta * inp.L) ** 2
    v3 = tau * (tau - 1)
    denom = 1 - 16 * e * v3
    if denom <= 0:
        return math.nan
    return 2 * ((tau - 1) / 2) / denom * inp.sigma2 + 8 * v3 / denom * inp.kappa2


def rho_stats_from_table(table: np.ndarray, T: int | None = None) -> RhoStats:
    """Sums from ``table[s-1, e-1] = rho_{s,e}`` (1-based ``s <= e``), normalised by ``T``.

    ``T`` defaults to ``len(table) + 1``, i.e. the table covers ``P_1 .. P_{T-1}``.
    The third sum has a free index ``s``; its maximum over ``s`` is used.
    """
    table = np.asarray(table, dtype=np.float64)
    n = table.shape[0]
    T = n + 1 if T is None else int(T)
    if T - 2 > n:
        raise ConfigurationError(f"rho table of size {n} cannot cover T={T}")
    s1 = s2 = 0.0
    inner = {}
    for t in range(2, T):
        col = table[: t - 1, t - 2]
        s1 += float(np.sum(col * col))
        total = float(np.sum(col))
        s2 += total * total
        inner[t] = (col, total)
    s3 = 0.0
    for s in range(1, max(T - 1, 1)):
        acc = sum(float(inner[t][0][s - 1]) * inner[t][1] for t in range(s + 1, T))
        s3 = max(s3, acc)
    return RhoStats(s1 / T, s2 / T, s3 / T, "trace")


def rho_stats_from_mixes(mixes, weights, T: int | None = None) -> RhoStats:
    return rho_stats_from_table(rho_table(mixes, weights), T)


def rho_stats_geometric(zeta: float, T: int) -> RhoStats:
    """Closed-form sums for ``rho_{s,e} = zeta^(e-s+1)``."""
    if not 0 <= zeta < 1:
        raise ConfigurationError("zeta must lie in [0, 1)")
    z2 = zeta * zeta
    s1 = s2 = 0.0
    # window t has rho values zeta^1 .. zeta^(t-1)
    for t in range(2, T):
        n = t - 1
        s1 += z2 * (1 - z2 ** n) / (1 - z2)
        g = zeta * (1 - zeta ** n) / (1 - zeta)
        s2 += g * g
    s3 = 0.0
    for s in range(1, max(T - 1, 1)):
        acc = 0.0
        for t in range(s + 1, T):
            n = t - 1
            acc += zeta ** (t - s) * zeta * (1 - zeta ** n) / (1 - zeta)
        s3 = max(s3, acc)
    return RhoStats(s1 / T, s2 / T, s3 / T, "geometric")


def eval_async_bound(inp: BoundInputs, rho: RhoStats) -> BoundBreakdown:
    """U1-U4, A, B, C and the right-hand side of the asynchronous bound."""
    out = BoundBreakdown(rho_mode=rho.mode)
    e = (inp.eta * inp.L) ** 2
    tmax, tmin, dm = inp.theta_max, inp.theta_min, inp.delta_max
    out.U2 = tmax * (tmax - 1)
    den = 1 - 2 * e * out.U2
    out.Phi0 = sum(m * m for m in inp.weights) * inp.sigma2
    if den <= 0:
        out.notes.append("1 - 2 eta^2 L^2 U2 <= 0")
        return out
    out.U1 = (1 - 14 * e * out.U2) / den
    out.U3 = (1 + 4 * e * out.U2) / den
    out.U4 = (1 + 22 * e * out.U2) / den
    out.A = (4 * e * dm ** 2 * tmax ** 2 / tmin * out.U4
             + 4 * e * (tmax - 1) / den
             + 8 * e * tmax ** 2 / tmin * out.U3 * rho.s1)
    out.B = (8 * e * dm ** 2 * tmax ** 2 / tmin * out.U4
             + 24 * e * out.U2 / den
             + 16 * e * tmax ** 2 / tmin * out.U3 * rho.s2)
    out.C = 8 * e * dm ** 2 * tmax * out.U4 + 16 * e * tmax ** 2 * out.U3 * rho.s3
    out.lr_feasible = 1 - inp.eta * inp.L * tmax ** 2 / tmin - out.C >= 0
    if not out.lr_feasible:
        out.notes.append("1 - eta L theta_max^2 / theta_min - C < 0")
    if out.U1 <= 0:
        out.lr_feasible = False
        out.notes.append("U1 <= 0")
        return out
    out.theorem2_rhs = (2 * inp.delta / (inp.eta * tmin * out.U1 * inp.T)
                        + inp.eta * inp.L * tmax ** 2 / (out.U1 * tmin ** 2) * out.Phi0
                        + out.A * inp.sigma2 / out.U1
                        + out.B * inp.kappa2 / out.U1)
    return out


def estimate_inputs(dataset, partition, model, probes: int = 4, seed: int = 0, batch_size: int | None = 10,
                    scale: float = 0.1) -> BoundInputs:
    """Empirical ``L``, ``sigma^2``, ``kappa^2`` and ``Delta`` at random parameter points.

    These are estimates for feasibility checks and tabulation only: ``L`` is
    the largest gradient-difference ratio over probe pairs and clients,
    ``sigma^2`` the exact with-replacement mini-batch variance at each probe,
    ``kappa^2`` the largest squared client-gradient deviation, and ``Delta``
    the loss at the shared initialization (the loss is non-negative).
    """
    if probes < 2:
        raise ConfigurationError("need at least two probe points")
    shards = [dataset.subset(s) for s in partition.assignment]
    m = partition.m
    points = [stream(seed, "probe", i).normal(0.0, scale, size=model.n_params) for i in range(probes)]
    client_grads = [np.stack([model.grad(w, x, y) for x, y in shards]) for w in points]

    l_est = 0.0
    for a, b in itertools.combinations(range(probes), 2):
        dw = float(np.linalg.norm(points[a] - points[b]))
        if dw > 0:
            ratios = np.linalg.norm(client_grads[a] - client_grads[b], axis=1) / dw
            l_est = max(l_est, float(ratios.max()))

    sigma2 = 0.0
    if batch_size is not None:
        for w, grads in zip(points, client_grads):
            for (x, y), g in zip(shards, grads):
                per = np.stack([model.grad(w, x[j : j + 1], y[j : j + 1]) for j in range(len(x))])
                var = float(np.mean(np.sum((per - g) ** 2, axis=1))) / batch_size
                sigma2 = max(sigma2, var)

    kappa2 = 0.0
    for grads in client_grads:
        dev = grads - m @ grads
        kappa2 = max(kappa2, float(np.max(np.sum(dev * dev, axis=1))))

    w0 = model.init_params(seed)
    delta = model.loss(w0, dataset.features, dataset.labels)
    return BoundInputs(L=l_est, sigma2=sigma2, kappa2=kappa2, delta=delta, weights=tuple(m))


GRID_COLUMNS = ("tau1", "tau2", "alpha", "zeta", "eta", "Lambda", "V1", "V2", "V3", "Phi0", "Phi",
                "theorem1_rhs", "lr_feasible")


def sync_grid(base: BoundInputs, tau1s, tau2s, alphas, zetas, etas=None) -> list[dict]:
    rows = []
    for t1, t2, a, z, eta in itertools.product(tau1s, tau2s, alphas, zetas, etas or [base.eta]):
        inp = base.with_(tau1=int(t1), tau2=int(t2), alpha=int(a), zeta=float(z), eta=float(eta))
        b = eval_sync_bound(inp)
        row = {"tau1": t1, "tau2": t2, "alpha": a, "zeta": z, "eta": eta}
        row.update({k: getattr(b, k) for k in GRID_COLUMNS[5:]})
        rows.append(row)
    return rows


def grid_to_csv(rows: list[dict], path=None) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(GRID_COLUMNS), lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in r.items()})
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
