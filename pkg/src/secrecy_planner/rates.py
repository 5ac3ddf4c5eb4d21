"""Closed-form rate evaluators for the legitimate and eavesdropping links.

Two evaluation routes are provided for each closed form:

* ``"newton"`` (default) rewrites every Vandermonde-type determinant ratio as a
  determinant of divided differences. Divided differences of monomials are
  complete homogeneous symmetric polynomials of the nodes, so the result stays
  exact when powers or LoS eigenvalues coincide and never forms the ratio of two
  vanishing determinants.
* ``"direct"`` assembles the block determinants literally, with a small
  deterministic jitter at confluent nodes. It is kept as an independent
  cross-check and is accurate only when the nodes are well separated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, special

from .errors import DomainError
from .geometry import LinkParams, Scenario, all_links
from .specfun import (
    ScaledMatrix,
    complete_homogeneous,
    h_series,
    log_binomial,
    series_divided_differences,
    signed_log_det,
)

LN2 = math.log(2.0)
PSI_FLOOR = 1e-6
CONFLUENCE_RTOL = 1e-6
BUDGET_SLACK = 1e-9


def to_bits(nats):
    return np.asarray(nats) / LN2 if np.ndim(nats) else float(nats) / LN2


@dataclass(frozen=True)
class PowerAllocation:
    """Power split over the K precoder eigenchannels.

    ``psi[k]`` feeds eigenchannel k of the destination's LoS Gram matrix.
    Entries below the activity floor are exactly zero and excluded.
    """

    psi: np.ndarray

    def __post_init__(self):
        psi = np.array(self.psi, dtype=float).reshape(-1)
        if psi.size == 0 or not np.all(np.isfinite(psi)) or np.any(psi < 0):
            raise DomainError("power allocation must be a nonempty finite nonnegative vector")
        if psi.sum() > 1 + BUDGET_SLACK:
            raise DomainError(f"power budget exceeded: sum = {psi.sum():.12g}")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)

    @classmethod
    def from_vector(cls, psi, floor: float = PSI_FLOOR) -> "PowerAllocation":
        psi = np.array(psi, dtype=float)
        psi[psi < floor] = 0.0
        return cls(psi)

    @classmethod
    def uniform(cls, K: int, r: Optional[int] = None) -> "PowerAllocation":
        r = K if r is None else r
        psi = np.zeros(K)
        psi[:r] = 1.0 / r
        return cls(psi)

    @property
    def K(self):
        return self.psi.size

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.psi > 0)

    @property
    def r(self) -> int:
        return int(self.active.size)

    @property
    def active_values(self) -> np.ndarray:
        return self.psi[self.active]


@dataclass(frozen=True)
class RateValue:
    bits_per_channel_use: float
    kind: str

    @property
    def nats(self):
        return self.bits_per_channel_use * LN2


@dataclass(frozen=True)
class CoeffTables:
    """Per-link tables of the eavesdropper closed form.

    ``a[n, i]`` is Gamma(t - s + n + i + 1) for order n = 0..s and zero-eigenvalue
    column i; ``b_scaled[n, j]`` is the omega_j column with its exp(omega_j) factor
    moved to ``b_log_scales[j]``.
    """

    a: np.ndarray
    b_scaled: np.ndarray
    b_log_scales: np.ndarray


@dataclass(frozen=True)
class ObjectiveValue:
    raw_nats: float
    legit_nats: float
    eav_nats: np.ndarray
    worst_index: int

    @property
    def clamped_bits(self):
        return max(self.raw_nats, 0.0) / LN2

    @property
    def raw_bits(self):
        return self.raw_nats / LN2

    @property
    def legit_bits(self):
        return self.legit_nats / LN2

    @property
    def eav_max_bits(self):
        return float(self.eav_nats[self.worst_index]) / LN2


def confluence_jitter(values, rtol: float = CONFLUENCE_RTOL) -> np.ndarray:
    """Spread nearly coincident nodes by a symmetric relative offset of ``rtol`` per index."""
    v = np.asarray(values, dtype=float).copy()
    if v.size < 2:
        return v
    srt = np.sort(v)
    gaps = np.diff(srt) <= rtol * np.maximum(np.abs(srt[1:]), np.finfo(float).tiny)
    if not np.any(gaps):
        return v
    n = v.size
    rank = np.empty(n)
    rank[np.argsort(v, kind="stable")] = np.arange(n)
    return v * (1.0 + rtol * (rank - (n - 1) / 2.0))


# ---------------------------------------------------------------------------
# Legitimate link


def inner_logdet_newton(omega_hat, r: int, n_rx: int) -> float:
    """E log det G for G = (M + H)^H (M + H), H an n_rx x r standard complex Gaussian.

    ``M`` carries sqrt(omega_hat) on its leading diagonal. Evaluated as
    Tr(R0^{-1} R1) over divided-difference tables of the row functions
    sum_m Gamma(d+i+m) / ((d+1)_m m!) v^m, with R1 carrying an extra digamma.
    """
    omega_hat = np.asarray(omega_hat, dtype=float)
    q = omega_hat.size
    if r < 1 or q > r or r > n_rx:
        raise DomainError(f"need q_hat <= r <= n_rx, got q_hat={q}, r={r}, n_rx={n_rx}")
    d = n_rx - r
    nodes = np.concatenate([omega_hat, np.zeros(r - q)])
    i = np.arange(1, r + 1)[:, None]

    def log_coef(m):
        m = m[None, :]
        return (special.gammaln(d + i + m) - special.gammaln(d + 1 + m) + special.gammaln(d + 1)
                - special.gammaln(m + 1))

    R0, R1, _ = series_divided_differences(log_coef, nodes, lambda m: special.digamma(d + i + m[None, :]))
    return float(np.trace(linalg.solve(R0, R1)))


def inner_logdet_series(omega_hat, r: int, n_rx: int) -> float:
    """Same quantity through the Cramer form with incomplete-gamma series entries."""
    omega_hat = np.asarray(omega_hat, dtype=float)
    q = omega_hat.size
    if r < 1 or q > r or r > n_rx:
        raise DomainError(f"need q_hat <= r <= n_rx, got q_hat={q}, r={r}, n_rx={n_rx}")
    val = float(np.sum(special.digamma(n_rx - np.arange(r))))
    if q == 0:
        return val
    om = confluence_jitter(np.sort(omega_hat)[::-1])
    V = om[None, :] ** np.arange(q)[:, None]
    ld_v = signed_log_det(V)
    tot = 0.0
    for j in range(q):
        Vj = V.copy()
        Vj[:, j] = [h_series(i, om[j], n_rx, q) for i in range(1, q + 1)]
        ld = signed_log_det(Vj)
        tot += ld.sign * ld_v.sign * math.exp(ld.log_abs - ld_v.log_abs)
    return val + tot


def energy_term_E(psi_active, omega_hat, r: int, n_rx: int, method: str = "newton") -> float:
    """Geometric-mean energy term of the legitimate lower bound."""
    psi_active = np.asarray(psi_active, dtype=float)
    if psi_active.size != r or np.any(psi_active <= 0):
        raise DomainError("energy term needs r strictly positive active powers")
    inner = (inner_logdet_newton if method == "newton" else inner_logdet_series)(omega_hat, r, n_rx)
    return math.exp((np.sum(np.log(psi_active)) + inner) / r)


def legit_energy(psi_active, active, link0: LinkParams, method="newton") -> float:
    """Energy term for the channels ``active`` of the destination link."""
    r = len(active)
    if r == 0:
        raise DomainError("no active eigenchannel")
    if r > link0.s:
        raise DomainError(f"legitimate link supports at most {link0.s} active channels, got {r}")
    om = link0.omega[np.asarray(active)]
    return energy_term_E(psi_active, om[om > 0], r, link0.n_rx, method)


def legit_lower_nats(psi: PowerAllocation, link0: LinkParams, method="newton") -> float:
    E = legit_energy(psi.active_values, psi.active, link0, method)
    return psi.r * math.log1p(link0.gamma_bar * E / link0.z)


def rate_legit_lower(psi: PowerAllocation, link0: LinkParams, method="newton") -> RateValue:
    return RateValue(legit_lower_nats(psi, link0, method) / LN2, "legit_lower")


# ---------------------------------------------------------------------------
# Eavesdropping link, divided-difference route


def _row_tables(link: LinkParams):
    """Scaled divided-difference table R[k, n] (k < s, n <= s) of the row functions.

    Row k is a divided difference over the nodes (s - q zeros, omega_1..omega_q);
    rows carry arbitrary positive scales which cancel in every ratio used.
    """
    s, d, q = link.s, link.t - link.s, link.q
    nodes = np.concatenate([np.zeros(s - q), link.omega[:q]])
    n = np.arange(s + 1)[:, None]

    def log_coef(m):
        m = m[None, :]
        return (special.gammaln(d + n + 1 + m) + special.gammaln(d + 1)
                - special.gammaln(d + 1 + m) - special.gammaln(m + 1))

    table, _, _ = series_divided_differences(log_coef, nodes)
    return table.T


def _weights(x, link: LinkParams):
    """W[n, k] = C(K, s-n) h_{n+r-s-k}(x_0..x_k) and the power-side top block."""
    s, K, r = link.s, link.n_tx, x.size
    Hx = complete_homogeneous(x, s + r)
    logC = np.array([log_binomial(K, s - n) if s - n <= K else -np.inf for n in range(s + 1)])
    W = np.zeros((s + 1, r))
    for n in range(s + 1):
        for k in range(r):
            p = n + r - s - k
            if p >= 0:
                W[n, k] = math.exp(logC[n]) * Hx[k, p]
    T = np.zeros((max(r - s, 0), r))
    for i in range(T.shape[0]):
        for k in range(min(i + 1, r)):
            T[i, k] = Hx[k, i - k]
    return W, T


def newton_D(x, link: LinkParams, R=None):
    """Divided-difference form of the eavesdropper determinant matrix and the row table."""
    x = np.asarray(x, dtype=float)
    R = _row_tables(link) if R is None else R
    s, r = link.s, x.size
    W, T = _weights(x, link)
    if s >= r:
        D = np.hstack([R[:, : s - r], R @ W])
    else:
        D = np.vstack([T, R @ W])
    return D, R


def _g0_constant(link: LinkParams, r: int) -> float:
    return -sum(log_binomial(link.n_tx, j) for j in range(1, min(r, link.s) + 1))


def eav_hmi_newton(psi_active, link: LinkParams, R=None) -> float:
    psi_active = np.asarray(psi_active, dtype=float)
    x = link.gamma_bar * psi_active / link.z
    D, R = newton_D(x, link, R)
    s = link.s
    return (_g0_constant(link, x.size) - signed_log_det(R[:, :s]).log_abs
            + signed_log_det(D).log_abs)


# ---------------------------------------------------------------------------
# Eavesdropping link, direct determinant route


def coeff_tables(link: LinkParams) -> CoeffTables:
    s, d, q = link.s, link.t - link.s, link.q
    n = np.arange(s + 1)[:, None]
    cols = np.arange(s - q)[None, :]
    a = np.exp(special.gammaln(d + n + cols + 1))
    om = link.omega[:q]
    b = np.zeros((s + 1, q))
    for row in range(s + 1):
        k = np.arange(row + 1)
        logc = (special.gammaln(row + 1) + special.gammaln(d + row + 1) + special.gammaln(d + 1)
                - special.gammaln(row - k + 1) - special.gammaln(k + 1) - special.gammaln(d + k + 1))
        b[row] = (np.exp(logc)[None, :] * om[:, None] ** k[None, :]).sum(axis=1)
    return CoeffTables(a=a, b_scaled=b, b_log_scales=om.copy())


def _function_rows(tables: CoeffTables):
    """Stack row functions f_i(order) with their log scales: zero-eigenvalue rows first."""
    F = np.vstack([tables.a.T, tables.b_scaled.T])
    scales = np.concatenate([np.zeros(tables.a.shape[1]), tables.b_log_scales])
    return F, scales


def _direct_tables(link: LinkParams) -> CoeffTables:
    if link.q > 1:
        om = confluence_jitter(link.omega[: link.q])
        link = LinkParams(link.gamma_bar, link.z, link.s, link.t, link.q,
                          np.concatenate([om, link.omega[link.q:]]), link.n_rx, link.n_tx, link.kappa)
    return coeff_tables(link)


def _poly_weights(link: LinkParams, r: int):
    s, K = link.s, link.n_tx
    lo = s - r if s >= r else 0
    n = np.arange(lo, s + 1)
    binom = np.array([math.exp(log_binomial(K, s - k)) if s - k <= K else 0.0 for k in n])
    return n, binom


def build_D(psi: PowerAllocation, link: LinkParams, gamma_bar_over_z: Optional[float] = None) -> ScaledMatrix:
    """Literal block determinant matrix in the active powers."""
    g = link.gamma_bar / link.z if gamma_bar_over_z is None else gamma_bar_over_z
    x = confluence_jitter(g * psi.active_values)
    return _build_D_x(x, link, _direct_tables(link))


def _build_D_x(x, link, tables):
    s, r = link.s, x.size
    F, scales = _function_rows(tables)
    n, binom = _poly_weights(link, r)
    poly = (F[:, n] * binom[None, :]) @ (x[None, :] ** (n + r - s)[:, None])
    if s >= r:
        body = np.hstack([F[:, : s - r], poly])
        rows = scales
    else:
        top = x[None, :] ** np.arange(r - s)[:, None]
        body = np.vstack([top, poly])
        rows = np.concatenate([np.zeros(r - s), scales])
    return ScaledMatrix(body, np.zeros(body.shape[1]), rows)


def eav_hmi_direct(psi_active, link: LinkParams) -> float:
    x = confluence_jitter(link.gamma_bar * np.asarray(psi_active, dtype=float) / link.z)
    tables = _direct_tables(link)
    F, scales = _function_rows(tables)
    s = link.s
    AB = ScaledMatrix(F[:, :s].T, scales)
    D = _build_D_x(x, link, tables)
    V = x[None, :] ** np.arange(x.size)[:, None]
    return (_g0_constant(link, x.size) - signed_log_det(AB).log_abs
            + signed_log_det(D).log_abs - signed_log_det(V).log_abs)


def eav_hmi_nats(psi: PowerAllocation, link: LinkParams, method: str = "newton") -> float:
    if psi.r == 0:
        raise DomainError("no active eigenchannel")
    if psi.r > link.n_tx:
        raise DomainError("more active channels than transmit antennas")
    if method == "newton":
        return eav_hmi_newton(psi.active_values, link)
    if method == "direct":
        return eav_hmi_direct(psi.active_values, link)
    raise ValueError(f"unknown method {method!r}")


def rate_eav_hmi(psi: PowerAllocation, link: LinkParams, method: str = "newton") -> RateValue:
    return RateValue(eav_hmi_nats(psi, link, method) / LN2, "eav_hmi")


# ---------------------------------------------------------------------------


def objective_from_links(psi: PowerAllocation, links: Sequence[LinkParams], method="newton") -> ObjectiveValue:
    legit = legit_lower_nats(psi, links[0], method)
    eav = np.array([eav_hmi_nats(psi, lk, method) for lk in links[1:]])
    worst = int(np.argmax(eav))
    return ObjectiveValue(raw_nats=legit - float(eav[worst]), legit_nats=legit, eav_nats=eav, worst_index=worst)


def secrecy_objective(psi: PowerAllocation, p_u, scenario: Scenario, method="newton") -> ObjectiveValue:
    """Legitimate lower bound minus the worst eavesdropper rate.

    ``raw_nats`` keeps the sign for the optimizer; ``clamped_bits`` is the
    reported secrecy rate.
    """
    return objective_from_links(psi, all_links(scenario, p_u), method)
