from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from sdfeel.data import partition_iid, partition_label_skew, synth_dataset
from sdfeel.exceptions import ConfigurationError
from sdfeel.models import QuadraticModel, SoftmaxRegression
from sdfeel.theory import (
    BoundInputs,
    RhoStats,
    eval_async_bound,
    eval_sync_bound,
    estimate_inputs,
    grid_to_csv,
    lambda_const,
    phi_perfect_consensus,
    rho_stats_from_mixes,
    rho_stats_from_table,
    rho_stats_geometric,
    sync_grid,
)
from sdfeel.topology import build_mixing, make_graph


def exact_sync_rhs(tau1, tau2, alpha, zeta, eta, L, sigma2, kappa2, delta, K, weights):
    """Second evaluation of the synchronous bound in exact rational arithmetic."""
    tau = tau1 * tau2
    z = zeta ** alpha
    lam = z * z / (1 - z * z) + 2 * z / (1 - z) + z * z / (1 - z) ** 2
    v3 = tau * (tau * lam + Fraction(tau - 1, 2) * (2 - z) / (1 - z))
    d = 1 - 16 * eta * eta * L * L * v3
    v1 = (tau * z * z / (1 - z * z) + Fraction(tau - 1, 2)) / d
    v2 = v3 / d
    phi0 = sum(m * m for m in weights) * sigma2
    phi = 2 * v1 * sigma2 + 8 * v2 * kappa2
    return lam, v1, v2, v3, phi, 2 * delta / (eta * K) + eta * L * phi0 + eta * eta * L * L * phi


def test_sync_bound_matches_exact_rational_evaluation():
    w = (Fraction(1, 4), Fraction(3, 4))
    exact = exact_sync_rhs(5, 1, 1, Fraction(3, 5), Fraction(1, 1000), 1, 2, 3, 4, 100, w)
    b = eval_sync_bound(BoundInputs(L=1, sigma2=2, kappa2=3, eta=1e-3, tau1=5, tau2=1, alpha=1, zeta=0.6,
                                    weights=(0.25, 0.75), delta=4, K=100))
    got = (b.Lambda, b.V1, b.V2, b.V3, b.Phi, b.theorem1_rhs)
    for g, e in zip(got, exact):
        assert abs(g - float(e)) <= 1e-12 * max(1.0, abs(float(e)))
    assert b.lr_feasible and not b.notes


def test_sync_bound_without_deviation_terms():
    b = eval_sync_bound(BoundInputs(tau1=1, tau2=1, zeta=0.0, sigma2=2.0, weights=(0.5, 0.5), eta=0.01, K=10))
    assert b.Lambda == b.V1 == b.V2 == b.V3 == b.Phi == 0
    assert b.theorem1_rhs == pytest.approx(2 * 1.0 / (0.01 * 10) + 0.01 * 1.0 * 0.5 * 2.0)


@pytest.mark.parametrize("tau1,tau2", [(2, 1), (3, 4), (10, 2)])
def test_sync_bound_at_perfect_consensus(tau1, tau2):
    inp = BoundInputs(tau1=tau1, tau2=tau2, zeta=0.0, eta=1e-3)
    b = eval_sync_bound(inp)
    tau = tau1 * tau2
    assert b.V3 == tau * (tau - 1)
    assert b.V1 == pytest.approx(((tau - 1) / 2) / (1 - 16e-6 * tau * (tau - 1)), rel=1e-14)
    assert b.Phi == pytest.approx(phi_perfect_consensus(inp), rel=1e-14)


def test_infeasible_learning_rate_is_flagged():
    b = eval_sync_bound(BoundInputs(tau1=20, tau2=5, zeta=0.9, eta=0.5))
    assert not b.lr_feasible and b.notes and math.isnan(b.theorem1_rhs)
    b = eval_sync_bound(BoundInputs(eta=1.5, L=1.0))
    assert not b.lr_feasible and "eta L" in b.notes[0]


def test_lambda_grows_with_zeta_power():
    assert lambda_const(0.0, 3) == 0.0
    assert lambda_const(0.5, 1) > lambda_const(0.5, 2) > lambda_const(0.5, 5) > 0


def test_monotone_over_grid():
    base = BoundInputs(eta=1e-4, L=1.0, sigma2=1.0, kappa2=1.0)
    zetas = np.linspace(0.0, 0.9, 10)
    phi = {}
    rhs = {}
    for t1, t2, a, z in itertools.product(range(1, 21), range(1, 21), range(1, 6), zetas):
        b = eval_sync_bound(base.with_(tau1=t1, tau2=t2, alpha=a, zeta=float(z)))
        if b.lr_feasible:
            phi[t1, t2, a, z] = b.Phi
            rhs[t1, t2, a, z] = b.theorem1_rhs
    assert len(phi) > 0.9 * 20 * 20 * 5 * 10
    for (t1, t2, a, z), v in phi.items():
        for nxt in [(t1 + 1, t2, a, z), (t1, t2 + 1, a, z)]:
            if nxt in phi:
                assert phi[nxt] >= v * (1 - 1e-12)
        if (t1, t2, a + 1, z) in rhs:
            assert rhs[t1, t2, a + 1, z] <= rhs[t1, t2, a, z] * (1 + 1e-12)
    for t1, t2, a in itertools.product(range(1, 21), range(1, 21), range(1, 6)):
        vals = [rhs[t1, t2, a, z] for z in zetas if (t1, t2, a, z) in rhs]
        assert all(b >= a_ * (1 - 1e-12) for a_, b in zip(vals, vals[1:]))


def test_async_bound_single_epoch_degeneration():
    rho = RhoStats(0.3, 0.4, 0.5, "trace")
    b = eval_async_bound(BoundInputs(theta_min=1, theta_max=1, delta_max=2, eta=1e-3), rho)
    assert b.U2 == 0 and b.U1 == b.U3 == b.U4 == 1
    e = 1e-6
    assert b.A == pytest.approx(4 * e * 4 + 8 * e * 0.3, rel=1e-12)


def test_async_bound_without_staleness_or_consensus_error():
    rho = RhoStats(0.0, 0.0, 0.0, "trace")
    inp = BoundInputs(theta_min=2, theta_max=5, delta_max=0, eta=1e-3, L=2.0)
    b = eval_async_bound(inp, rho)
    e = (1e-3 * 2.0) ** 2
    den = 1 - 2 * e * 20
    assert b.A == pytest.approx(4 * e * 4 / den, rel=1e-12)
    assert b.B == pytest.approx(24 * e * 20 / den, rel=1e-12)
    assert b.C == 0
    assert b.lr_feasible and np.isfinite(b.theorem2_rhs)


def test_async_bound_flags_infeasible_rate():
    b = eval_async_bound(BoundInputs(theta_max=20, eta=1.0), RhoStats(0, 0, 0, "trace"))
    assert not b.lr_feasible and b.notes


@pytest.mark.parametrize("T", [2, 3, 10, 40])
def test_rho_sums_of_constant_mixing_are_geometric(T):
    mix = build_mixing(make_graph("ring", 6))
    table_stats = rho_stats_from_mixes([mix.p] * (T - 1), mix.weights, T)
    closed = rho_stats_geometric(mix.zeta, T)
    for a, b in [(table_stats.s1, closed.s1), (table_stats.s2, closed.s2), (table_stats.s3, closed.s3)]:
        assert abs(a - b) < 1e-10


def test_rho_table_bounds():
    with pytest.raises(ConfigurationError):
        rho_stats_from_table(np.zeros((2, 2)), T=10)
    with pytest.raises(ConfigurationError):
        rho_stats_geometric(1.0, 5)
    zero = rho_stats_from_table(np.zeros((4, 4)))
    assert zero.s1 == zero.s2 == zero.s3 == 0


def test_bound_input_validation():
    with pytest.raises(ConfigurationError):
        BoundInputs(zeta=1.0)
    with pytest.raises(ConfigurationError):
        BoundInputs(L=-1.0)
    with pytest.raises(ConfigurationError):
        BoundInputs(theta_min=3, theta_max=2)
    with pytest.raises(ConfigurationError):
        BoundInputs(tau1=0)


def test_estimated_non_iidness_small_for_iid():
    ds = synth_dataset(5, 1000, 4, seed=0)
    model = SoftmaxRegression(4, 5)
    iid = estimate_inputs(ds, partition_iid(ds, 10, 0), model, probes=3)
    skew = estimate_inputs(ds, partition_label_skew(ds, 10, 1, 0), model, probes=3, batch_size=None)
    assert iid.kappa2 < 0.1 * skew.kappa2
    assert skew.sigma2 == 0.0 and iid.sigma2 > 0
    assert iid.delta == pytest.approx(math.log(5), rel=0.05)


def test_estimated_smoothness_of_quadratic():
    ds = synth_dataset(2, 20, 3, seed=0)
    part = partition_iid(ds, 4, 0)
    q = QuadraticModel((0.5, 2.0, 7.0))
    est = estimate_inputs(ds, part, q, probes=6)
    assert q.smoothness / 2 <= est.L <= q.smoothness * 2


def test_grid_csv():
    rows = sync_grid(BoundInputs(), [1, 5], [1], [1, 2], [0.0, 0.6])
    assert len(rows) == 8
    text = grid_to_csv(rows)
    assert text.splitlines()[0].startswith("tau1,tau2,alpha,zeta,eta,Lambda")
    assert len(text.splitlines()) == 9
