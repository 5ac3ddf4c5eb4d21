import dataclasses
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import exact_hmi
from secrecy_planner.cli_io import bundled_scenario_path, load_scenario
from secrecy_planner.geometry import path_gain_z, synthetic_link
from secrecy_planner.gradients import (
    dRL_dz,
    dRU_dz,
    dz_dp,
    grad_RL_psi,
    grad_RU_psi,
    gradcheck_suite,
)
from secrecy_planner.rates import PowerAllocation, legit_lower_nats

TOL = 1e-5
OMEGA = {0: [], 1: [3.5], 2: [5.0, 1.2]}


def _fd(f, x, rel=1e-3):
    """Five-point central difference of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.size)
    for j in range(x.size):
        h = rel * max(abs(x[j]), 1e-3)
        e = np.zeros(x.size)
        e[j] = h
        out[j] = (8 * (f(x + e) - f(x - e)) - (f(x + 2 * e) - f(x - 2 * e))) / (12 * h)
    return out


def _rel(a, b):
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b))))


def _configs():
    for K, N, q in itertools.product((1, 2, 4), (1, 2, 4), (0, 1, 2)):
        if q > min(K, N):
            continue
        for r in range(1, K + 1):  # includes r > min(K, N) for the eavesdropper rate
            yield K, N, q, r


CONFIGS = list(_configs())


@pytest.mark.parametrize("K,N,q,r", CONFIGS)
def test_eavesdropper_derivatives(K, N, q, r):
    rng = np.random.default_rng(K * 100 + N * 10 + q + r)
    link = synthetic_link(K, N, OMEGA[q], gamma_bar=rng.uniform(0.5, 40.0), z=rng.uniform(0.5, 2.0))
    for _ in range(5):
        vals = rng.dirichlet(np.ones(r)) * rng.uniform(0.5, 0.95)
        psi = np.zeros(K)
        psi[:r] = vals

        # the exact finite expansion is smooth, so differencing it adds no evaluation noise
        om = link.omega_nonzero
        fpsi = _fd(lambda v: exact_hmi(link.gamma_bar * v / link.z, om, K, N), vals)
        fz = _fd(lambda z: exact_hmi(link.gamma_bar * vals / z[0], om, K, N), [link.z])
        alloc = PowerAllocation(psi)
        for method in ("newton", "direct"):
            assert _rel(grad_RU_psi(alloc, link, method), fpsi) <= TOL
            assert _rel(dRU_dz(alloc, link, method), fz) <= TOL


@pytest.mark.parametrize("K,N,q,r", [c for c in CONFIGS if c[3] <= min(c[0], c[1])])
def test_legitimate_derivatives(K, N, q, r):
    rng = np.random.default_rng(7 + K + 3 * N + 11 * q + r)
    link = synthetic_link(K, N, OMEGA[q], gamma_bar=rng.uniform(0.5, 40.0), z=rng.uniform(0.5, 2.0))
    for _ in range(5):
        vals = rng.dirichlet(np.ones(r)) * rng.uniform(0.5, 0.95)
        psi = np.zeros(K)
        psi[:r] = vals

        def f(v):
            full = np.zeros(K)
            full[:r] = v
            return legit_lower_nats(PowerAllocation(full), link)

        alloc = PowerAllocation(psi)
        assert _rel(grad_RL_psi(alloc, link), _fd(f, vals)) <= TOL
        fz = _fd(lambda z: legit_lower_nats(alloc, link.with_z(z[0])), [link.z])
        assert _rel(dRL_dz(alloc, link), fz) <= TOL


@settings(max_examples=30, deadline=None)
@given(st.permutations(range(3)), st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3))
def test_eavesdropper_gradient_permutation_equivariant(perm, w):
    link = synthetic_link(3, 2, [4.0, 0.8], gamma_bar=12.0, z=1.0)
    psi = np.array(w) / (np.sum(w) * 1.1)
    perm = list(perm)
    g = grad_RU_psi(PowerAllocation(psi), link)
    gp = grad_RU_psi(PowerAllocation(psi[perm]), link)
    assert np.allclose(gp, g[perm], rtol=1e-8)
    assert dRU_dz(PowerAllocation(psi[perm]), link) == pytest.approx(dRU_dz(PowerAllocation(psi), link), rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.tuples(*[st.floats(-10, 10)] * 3), st.floats(2.0, 4.0))
def test_distance_chain_rule(p, alpha):
    p = np.asarray(p) + np.array([0.0, 0.0, 12.0])
    tau = np.array([3.0, -1.0, 0.0])
    h = 1e-3
    fd = [(path_gain_z(p + h * e, tau, alpha) - path_gain_z(p - h * e, tau, alpha)) / (2 * h) for e in np.eye(3)]
    assert _rel(dz_dp(p, tau, alpha), fd) <= 1e-5


def test_strict_paper_form_is_the_alpha_two_case():
    p, tau = np.array([1.0, 2.0, 9.0]), np.array([4.0, 0.0, 0.0])
    assert np.allclose(dz_dp(p, tau, 2.0, strict_paper=True), dz_dp(p, tau, 2.0))
    assert not np.allclose(dz_dp(p, tau, 2.5, strict_paper=True), dz_dp(p, tau, 2.5))


@pytest.mark.parametrize("name", ["fig3", "fig4a", "fig2_k4n4", "fig5"])
def test_bundled_scenarios_certify(name):
    sc = load_scenario(bundled_scenario_path(name))
    checks = gradcheck_suite(sc, points=8, seed=3)
    worst = max(checks, key=lambda c: c.relative_error)
    assert worst.relative_error <= TOL, worst


def test_strict_paper_location_form_fails_off_alpha_two():
    sc = load_scenario(bundled_scenario_path("fig4a"))
    checks = gradcheck_suite(sc, points=4, seed=1, strict_paper=True)
    bad = {c.name for c in checks if c.relative_error > TOL}
    assert bad and all(name.endswith("_dp") for name in bad)
    square = sc.replace(radio=dataclasses.replace(sc.radio, alpha=2.0))
    assert max(c.relative_error for c in gradcheck_suite(square, points=4, seed=1, strict_paper=True)) <= TOL
