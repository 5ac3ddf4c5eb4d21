"""Analytic first derivatives of the closed-form rates.

Power gradients are returned for the active channels only, aligned with
``PowerAllocation.active``. Distances enter the rates only through the
path-loss denominator z, so location gradients follow from the z derivatives
by the chain rule with the LoS eigenstructure held at its current value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import SingularToTolerance
from .geometry import LinkParams, Scenario, as_position, distance, link_params
from .rates import (
    PowerAllocation,
    _build_D_x,
    _direct_tables,
    _poly_weights,
    _weights,
    confluence_jitter,
    legit_energy,
    newton_D,
)
from .specfun import PIVOT_RTOL, ScaledMatrix, complete_homogeneous, log_binomial


def _factor(m):
    """LU of ``m`` after row and column equilibration; traces are unaffected by it."""
    m = np.asarray(m, dtype=float)
    rows = np.abs(m).max(axis=1)
    rows[rows == 0] = 1.0
    cols = np.abs(m / rows[:, None]).max(axis=0)
    cols[cols == 0] = 1.0
    lu, piv = linalg.lu_factor(m / rows[:, None] / cols[None, :])
    mags = np.abs(np.diagonal(lu))
    if mags.min() == 0 or mags.min() < PIVOT_RTOL * mags.max():
        raise SingularToTolerance("determinant matrix is singular to tolerance")
    return lu, piv, rows, cols


def _trace_solve(factor, m):
    lu, piv, rows, cols = factor
    sol = linalg.lu_solve((lu, piv), np.asarray(m, dtype=float) / rows[:, None])
    return float(np.trace(sol / cols[:, None]))


# ---------------------------------------------------------------------------
# Eavesdropper rate, divided-difference route


def _weight_derivative(x, j, link: LinkParams):
    """Derivatives of the weight blocks with respect to x_j.

    Uses d h_p(x_0..x_k) / d x_j = h_{p-1}(x_0..x_k, x_j) for j <= k.
    """
    s, K, r = link.s, link.n_tx, x.size
    deg = s + r
    Hx = complete_homogeneous(x, deg)
    dW = np.zeros((s + 1, r))
    dT = np.zeros((max(r - s, 0), r))
    for k in range(j, r):
        ext = Hx[k].copy()
        for p in range(1, deg + 1):
            ext[p] += x[j] * ext[p - 1]
        for n in range(s + 1):
            p = n + r - s - k
            if p >= 1 and s - n <= K:
                dW[n, k] = math.exp(log_binomial(K, s - n)) * ext[p - 1]
        for i in range(dT.shape[0]):
            if i - k >= 1:
                dT[i, k] = ext[i - k - 1]
    return dW, dT


def grad_RU_x(x, link: LinkParams, R=None):
    """Gradient of the eavesdropper rate (nats) with respect to x_j = gamma_bar psi_j / z."""
    x = np.asarray(x, dtype=float)
    D, R = newton_D(x, link, R)
    fac = _factor(D)
    s, r = link.s, x.size
    out = np.zeros(r)
    for j in range(r):
        dW, dT = _weight_derivative(x, j, link)
        if s >= r:
            dD = np.hstack([np.zeros((s, s - r)), R @ dW])
        else:
            dD = np.vstack([dT, R @ dW])
        out[j] = _trace_solve(fac, dD)
    return out


def grad_RU_psi(psi: PowerAllocation, link: LinkParams, method: str = "newton") -> np.ndarray:
    """d R_U / d psi_j (nats) for the active channels."""
    g = link.gamma_bar / link.z
    if method == "direct":
        return _grad_direct(psi.active_values, link)[0]
    return g * grad_RU_x(g * psi.active_values, link)


def dRU_dz(psi: PowerAllocation, link: LinkParams, method: str = "newton") -> float:
    if method == "direct":
        return _grad_direct(psi.active_values, link)[1]
    x = link.gamma_bar * psi.active_values / link.z
    return -float(x @ grad_RU_x(x, link)) / link.z


# ---------------------------------------------------------------------------
# Eavesdropper rate, direct determinant route


def dD_dpsi(psi: PowerAllocation, link: LinkParams, gamma_bar_over_z: float, j: int) -> ScaledMatrix:
    """Entrywise derivative of :func:`rates.build_D` with respect to active channel ``j`` (0-based)."""
    g = gamma_bar_over_z
    x = confluence_jitter(g * psi.active_values)
    return _dD_dx(x, link, _direct_tables(link), j, g)


def _dD_dx(x, link, tables, j, factor=1.0):
    base = _build_D_x(x, link, tables)
    s, r = link.s, x.size
    body = np.zeros_like(base.body)
    if j < 0 or j >= r:
        return ScaledMatrix(body, base.column_log_scales, base.row_log_scales)
    F = np.vstack([tables.a.T, tables.b_scaled.T])
    n, binom = _poly_weights(link, r)
    pw = n + r - s
    dcol = (F[:, n] * binom[None, :]) @ np.where(pw > 0, pw * x[j] ** np.maximum(pw - 1, 0), 0.0)
    if s >= r:
        body[:, s - r + j] = dcol
    else:
        i = np.arange(r - s)
        body[: r - s, j] = np.where(i > 0, i * x[j] ** np.maximum(i - 1, 0), 0.0)
        body[r - s:, j] = dcol
    return ScaledMatrix(body * factor, base.column_log_scales, base.row_log_scales)


def dD_dz(psi: PowerAllocation, link: LinkParams) -> ScaledMatrix:
    """Entrywise derivative of the literal determinant matrix with respect to z."""
    x = confluence_jitter(link.gamma_bar * psi.active_values / link.z)
    tables = _direct_tables(link)
    total = None
    for j in range(x.size):
        dj = _dD_dx(x, link, tables, j, -x[j] / link.z)
        total = dj.body if total is None else total + dj.body
    base = _build_D_x(x, link, tables)
    return ScaledMatrix(total, base.column_log_scales, base.row_log_scales)


def _grad_direct(psi_active, link: LinkParams):
    """Jacobi-formula gradients of the literal closed form: (d/dpsi, d/dz)."""
    g = link.gamma_bar / link.z
    psi_active = confluence_jitter(np.asarray(psi_active, dtype=float))
    x = g * psi_active
    tables = _direct_tables(link)
    D = _build_D_x(x, link, tables)
    fac = _factor(D.body)
    r = x.size
    V = psi_active[None, :] ** np.arange(r)[:, None]
    vfac = _factor(V)
    grad = np.zeros(r)
    dz = 0.0
    for j in range(r):
        # row scales of D and its derivative coincide, so bodies suffice
        dDx = _dD_dx(x, link, tables, j).body
        tr = _trace_solve(fac, dDx)
        dV = np.zeros_like(V)
        i = np.arange(1, r)
        dV[1:, j] = i * psi_active[j] ** (i - 1)
        grad[j] = g * tr - _trace_solve(vfac, dV)
        dz -= x[j] / link.z * tr
    dz += r * (r - 1) / (2.0 * link.z)
    return grad, dz


# ---------------------------------------------------------------------------
# Legitimate rate


def _legit_state(psi: PowerAllocation, link0: LinkParams):
    E = legit_energy(psi.active_values, psi.active, link0)
    return psi.r, E, link0.gamma_bar, link0.z


def grad_RL_psi(psi: PowerAllocation, link0: LinkParams) -> np.ndarray:
    """d R_L / d psi_j (nats); uses dE/dpsi_j = E / (r psi_j)."""
    r, E, gb, z = _legit_state(psi, link0)
    return gb * E / (psi.active_values * (z + gb * E))


def dRL_dz(psi: PowerAllocation, link0: LinkParams) -> float:
    r, E, gb, z = _legit_state(psi, link0)
    return -r * gb * E / (z * z + z * gb * E)


# ---------------------------------------------------------------------------
# Location


def dz_dp(p_u, p_tau, alpha: float, strict_paper: bool = False) -> np.ndarray:
    """Gradient of z = ||p_u - p_tau||**alpha with respect to p_u.

    ``strict_paper`` uses 2 (p_u - p_tau), which is exact only for alpha = 2.
    """
    diff = as_position(p_u) - as_position(p_tau)
    if strict_paper:
        return 2.0 * diff
    dist = distance(p_u, p_tau)
    return alpha * dist ** (alpha - 2.0) * diff


def grad_location(psi: PowerAllocation, p_u, scenario: Scenario, which="legit",
                  strict_paper: bool = False, link: LinkParams = None) -> np.ndarray:
    """Gradient (nats per metre) of R_L (``which="legit"``) or R_U of eavesdropper ``which`` (1-based)."""
    idx = 0 if which == "legit" else int(which)
    node = scenario.nodes[idx]
    lk = link_params(scenario, idx, p_u) if link is None else link
    dr_dz = dRL_dz(psi, lk) if idx == 0 else dRU_dz(psi, lk)
    grad = dr_dz * dz_dp(p_u, node.position, scenario.radio.alpha, strict_paper)
    if scenario.altitude_fixed:
        grad[2] = 0.0
    return grad


# ---------------------------------------------------------------------------
# Finite-difference certification


@dataclass(frozen=True)
class GradCheck:
    name: str
    point: int
    relative_error: float


def _relative(analytic, numeric) -> float:
    a = np.atleast_1d(np.asarray(analytic, dtype=float))
    n = np.atleast_1d(np.asarray(numeric, dtype=float))
    scale = max(float(np.max(np.abs(n))), float(np.max(np.abs(a))), 1e-300)
    return float(np.max(np.abs(a - n)) / scale)


def _central(f, x, steps):
    """Fourth-order central differences, so steps can stay well above evaluation noise."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.size)
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = steps[j]
        out[j] = (8.0 * (f(x + e) - f(x - e)) - (f(x + 2 * e) - f(x - 2 * e))) / (12.0 * steps[j])
    return out


def _central_scalar(f, x, step):
    return float(_central(lambda v: f(v[0]), np.array([x]), [step])[0])


def random_check_point(scenario: Scenario, rng):
    """A feasible location and an interior power allocation for derivative checks."""
    start = as_position(scenario.uav_start)
    while True:
        off = rng.uniform(-1.0, 1.0, 3) * scenario.d_max
        if scenario.altitude_fixed:
            off[2] = 0.0
        if np.linalg.norm(off) <= scenario.d_max and start[2] + off[2] > 0.5:
            break
    r = min(scenario.destination.n_antennas, scenario.K)
    psi = np.zeros(scenario.K)
    psi[:r] = rng.dirichlet(np.ones(r)) * rng.uniform(0.5, 0.95)
    return start + off, PowerAllocation(psi)


def gradcheck_suite(scenario: Scenario, points: int = 100, seed: int = 0,
                    strict_paper: bool = False, methods=("newton", "direct")) -> list:
    """Compare every analytic derivative with central differences at random points.

    Location derivatives are checked against differences of the rates with the
    LoS eigenstructure frozen at the base point, which is what they model. The
    reference always uses the scenario's path-loss exponent, so ``strict_paper``
    location gradients only certify when that exponent is 2.
    Returns one :class:`GradCheck` per derivative and point.
    """
    from .geometry import path_gain_z
    from .rates import eav_hmi_nats, legit_lower_nats

    rng = np.random.default_rng(seed)
    alpha = scenario.radio.alpha
    out = []
    for k in range(points):
        p, psi = random_check_point(scenario, rng)
        links = [link_params(scenario, i, p) for i in range(len(scenario.nodes))]
        act, vals = psi.active, psi.active_values
        hpsi = 1e-2 * vals

        def with_active(v):
            full = np.zeros(scenario.K)
            full[act] = v
            return PowerAllocation(full)

        def z_at(q, idx):
            return path_gain_z(q, scenario.nodes[idx].position, alpha)

        hp = np.full(3, 1e-3)
        if scenario.altitude_fixed:
            hp[2] = 1.0

        lk0 = links[0]
        fd = _central(lambda v: legit_lower_nats(with_active(v), lk0), vals, hpsi)
        out.append(GradCheck("dRL_dpsi", k, _relative(grad_RL_psi(psi, lk0), fd)))
        fz = _central_scalar(lambda z: legit_lower_nats(psi, lk0.with_z(z)), lk0.z, 1e-3 * lk0.z)
        out.append(GradCheck("dRL_dz", k, _relative(dRL_dz(psi, lk0), fz)))
        fdp = _central(lambda q: legit_lower_nats(psi, lk0.with_z(z_at(q, 0))), p, hp)
        if scenario.altitude_fixed:
            fdp[2] = 0.0
        out.append(GradCheck("dRL_dp", k, _relative(grad_location(psi, p, scenario, "legit", strict_paper, lk0), fdp)))

        for t, lk in enumerate(links[1:], start=1):
            fd = _central(lambda v: eav_hmi_nats(with_active(v), lk), vals, hpsi)
            fz = _central_scalar(lambda z: eav_hmi_nats(psi, lk.with_z(z)), lk.z, 1e-3 * lk.z)
            for m in methods:
                out.append(GradCheck(f"dRU{t}_dpsi[{m}]", k, _relative(grad_RU_psi(psi, lk, m), fd)))
                out.append(GradCheck(f"dRU{t}_dz[{m}]", k, _relative(dRU_dz(psi, lk, m), fz)))
            fdp = _central(lambda q: eav_hmi_nats(psi, lk.with_z(z_at(q, t))), p, hp)
            if scenario.altitude_fixed:
                fdp[2] = 0.0
            out.append(GradCheck(f"dRU{t}_dp", k, _relative(grad_location(psi, p, scenario, t, strict_paper, lk), fdp)))
    return out
