"""Alternating power and location optimization by successive convex approximation.

The power step maximizes the legitimate lower bound minus the pointwise maximum
of first-order expansions of the eavesdropper rates. Those expansions upper
bound the concave eavesdropper rates, so the surrogate is a minorizer and every
accepted step raises the exact objective. The location step maximizes a linear
model of the objective over the intersection of the dispatch ball and a trust
ball, with step halving whenever the exact objective would drop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .errors import GridTooLarge, InfeasibleAnchor
from .geometry import LinkParams, Scenario, all_links, as_position
from .gradients import dz_dp, grad_RU_psi, dRL_dz, dRU_dz
from .rates import (
    LN2,
    PowerAllocation,
    _row_tables,
    eav_hmi_nats,
    eav_hmi_newton,
    legit_energy,
    legit_lower_nats,
    objective_from_links,
)

FEAS_TOL = 1e-9
MONOTONE_SLACK_BITS = 1e-12


@dataclass(frozen=True)
class OptimizerConfig:
    eps1: float = 1e-3
    eps2: float = 1e-3
    max_outer_iters: int = 200
    max_inner_iters: int = 50
    subgradient_iters: int = 400
    step_a: float = 0.2
    step_b: float = 4.0
    kkt_tol: float = 1e-5
    psi_floor: float = 1e-6
    d_delta: Optional[float] = None
    strict_paper_gradients: bool = False
    backtrack_halvings: int = 6

    def __post_init__(self):
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError("stopping thresholds must be positive")
        if self.max_inner_iters < 1 or self.subgradient_iters < 1 or self.max_outer_iters < 0:
            raise ValueError("iteration caps must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    psi: np.ndarray
    p_u: np.ndarray
    legit_bits: float
    eav_max_bits: float
    objective_bits: float
    surrogate_bits: float = float("nan")


@dataclass
class OptTrace:
    records: List[TraceRecord] = field(default_factory=list)
    termination: str = ""
    inner_iterations: List[int] = field(default_factory=list)
    waterfilling_objective_bits: float = float("nan")

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective_bits for r in self.records])

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    @property
    def initial(self) -> TraceRecord:
        return self.records[0]


# ---------------------------------------------------------------------------
# Power


def active_count(scenario: Scenario) -> int:
    return min(scenario.destination.n_antennas, scenario.K)


def waterfilling_init(scenario: Scenario, p_u=None, psi_floor: float = 1e-6) -> PowerAllocation:
    """Water-filling over the destination's LoS eigenchannels, with a power floor."""
    p_u = scenario.uav_start if p_u is None else p_u
    link0 = all_links(scenario, p_u)[0]
    r = active_count(scenario)
    gains = link0.gamma_bar * link0.omega[:r] / link0.z
    pos = gains > 0
    inv = np.where(pos, 1.0 / np.where(pos, gains, 1.0), np.inf)

    def fill(mu):
        return np.where(pos, np.maximum(mu - inv, psi_floor), psi_floor)

    lo, hi = 0.0, 1.0 + (inv[pos].max() if pos.any() else 0.0)
    if fill(lo).sum() >= 1.0:
        psi = np.full(r, 1.0 / r)
    else:
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if fill(mid).sum() > 1.0:
                hi = mid
            else:
                lo = mid
        psi = fill(lo)
        psi /= psi.sum()
    out = np.zeros(scenario.K)
    out[:r] = psi
    return PowerAllocation(out)


def project_floor_simplex(v, floor: float) -> np.ndarray:
    """Euclidean projection onto {x >= floor, sum x <= 1}."""
    v = np.asarray(v, dtype=float)
    cap = 1.0 - floor * v.size
    y = np.maximum(v - floor, 0.0)
    if y.sum() > cap:
        u = np.sort(v - floor)[::-1]
        css = np.cumsum(u)
        k = np.nonzero(u * np.arange(1, u.size + 1) > (css - cap))[0][-1]
        theta = (css[k] - cap) / (k + 1.0)
        y = np.maximum(v - floor - theta, 0.0)
    return y + floor


@dataclass
class _PowerModel:
    """Exact and surrogate objectives over the active channels at a fixed location."""

    links: Sequence[LinkParams]
    K: int
    r: int

    def __post_init__(self):
        self.active = np.arange(self.r)
        lk0 = self.links[0]
        base = legit_energy(np.ones(self.r), self.active, lk0)
        self._c = lk0.gamma_bar * base / lk0.z

    def alloc(self, phi) -> PowerAllocation:
        psi = np.zeros(self.K)
        psi[: self.r] = phi
        return PowerAllocation(psi)

    def legit(self, phi):
        ge = self._c * math.exp(np.mean(np.log(phi)))
        return self.r * math.log1p(ge), ge

    def legit_grad(self, phi):
        _, ge = self.legit(phi)
        return ge / (phi * (1.0 + ge))

    def eav(self, phi):
        a = self.alloc(phi)
        return np.array([eav_hmi_nats(a, lk) for lk in self.links[1:]])

    def eav_grads(self, phi):
        a = self.alloc(phi)
        return np.array([grad_RU_psi(a, lk) for lk in self.links[1:]])

    def exact(self, phi):
        return self.legit(phi)[0] - float(self.eav(phi).max())


def taylor_RU_psi(phi_anchor, link: LinkParams, phi_query) -> float:
    """First-order expansion of the eavesdropper rate (nats) at ``phi_anchor``."""
    a = PowerAllocation(phi_anchor)
    q = np.asarray(phi_query, dtype=float)[a.active]
    return eav_hmi_nats(a, link) + float(grad_RU_psi(a, link) @ (q - a.active_values))


def _solve_surrogate(model: _PowerModel, anchor, U, G, cfg: OptimizerConfig):
    """Projected subgradient ascent on R_L(phi) - max_t [U_t + G_t (phi - anchor)]."""

    def value(phi):
        return model.legit(phi)[0] - float(np.max(U + G @ (phi - anchor)))

    best, best_val = anchor.copy(), value(anchor)
    phi = anchor.copy()
    for m in range(cfg.subgradient_iters):
        lin = U + G @ (phi - anchor)
        t = int(np.argmax(lin))
        g = model.legit_grad(phi) - G[t]
        nrm = float(np.linalg.norm(g))
        if nrm == 0.0:
            break
        phi = project_floor_simplex(phi + cfg.step_a / (cfg.step_b + m) * g / nrm, cfg.psi_floor)
        val = value(phi)
        if val > best_val:
            best, best_val = phi.copy(), val
        if np.linalg.norm(project_floor_simplex(phi + g, cfg.psi_floor) - phi) <= cfg.kkt_tol:
            break
    return best, best_val


def solve_power_subproblem(phi_anchor, p_u, scenario: Scenario, cfg: OptimizerConfig = OptimizerConfig(),
                           links=None) -> PowerAllocation:
    links = all_links(scenario, p_u) if links is None else links
    model = _PowerModel(links, scenario.K, active_count(scenario))
    anchor = np.asarray(phi_anchor.psi if isinstance(phi_anchor, PowerAllocation) else phi_anchor,
                        dtype=float)[: model.r]
    anchor = project_floor_simplex(anchor, cfg.psi_floor)
    phi, _ = _solve_surrogate(model, anchor, model.eav(anchor), model.eav_grads(anchor), cfg)
    return model.alloc(phi)


def algorithm1_power(psi_init: PowerAllocation, p_u, scenario: Scenario,
                     cfg: OptimizerConfig = OptimizerConfig(), links=None):
    """Iterative power optimization at a fixed location.

    Returns ``(allocation, trace)``; trace records hold the exact objective after
    each surrogate solve and the surrogate value that produced it.
    """
    p_u = as_position(p_u)
    links = all_links(scenario, p_u) if links is None else links
    model = _PowerModel(links, scenario.K, active_count(scenario))
    phi = project_floor_simplex(np.asarray(psi_init.psi, dtype=float)[: model.r], cfg.psi_floor)
    U = model.eav(phi)
    current = model.legit(phi)[0] - float(U.max())
    trace = OptTrace()
    trace.records.append(_record(0, model, phi, p_u, U, current, current))
    trace.termination = "iteration_cap"
    for m in range(1, cfg.max_inner_iters + 1):
        G = model.eav_grads(phi)
        nxt, surrogate = _solve_surrogate(model, phi, U, G, cfg)
        U_next = model.eav(nxt)
        val = model.legit(nxt)[0] - float(U_next.max())
        if val < current - 1e-12:
            trace.termination = "no_improvement"
            break
        gain = val - current
        phi, U, current = nxt, U_next, val
        trace.records.append(_record(m, model, phi, p_u, U, current, surrogate))
        if gain / LN2 < cfg.eps1:
            trace.termination = "converged"
            break
    return model.alloc(phi), trace


def _record(it, model, phi, p_u, U, exact, surrogate):
    psi = np.zeros(model.K)
    psi[: model.r] = phi
    legit = model.legit(phi)[0]
    return TraceRecord(it, psi, np.array(p_u, dtype=float), legit / LN2, float(U.max()) / LN2,
                       exact / LN2, surrogate / LN2)


# ---------------------------------------------------------------------------
# Location


def two_ball_linear_max(c, center_outer, r_outer, center_inner, r_inner) -> np.ndarray:
    """Maximizer of c.p over {|p - center_outer| <= r_outer} and {|p - center_inner| <= r_inner}."""
    c = np.asarray(c, dtype=float)
    a = np.asarray(center_outer, dtype=float)
    b = np.asarray(center_inner, dtype=float)
    if np.linalg.norm(b - a) > r_outer + FEAS_TOL:
        raise InfeasibleAnchor(f"anchor lies {np.linalg.norm(b - a):.6g} m from the start (limit {r_outer})")
    nc = float(np.linalg.norm(c))
    if nc == 0.0:
        return b.copy()
    ch = c / nc
    cand = b + r_inner * ch
    if np.linalg.norm(cand - a) <= r_outer:
        return cand
    cand = a + r_outer * ch
    if np.linalg.norm(cand - b) <= r_inner:
        return cand
    ell = float(np.linalg.norm(b - a))
    if ell < 1e-12:
        # concentric balls that missed both tests only through rounding
        return a + min(r_outer, r_inner) * ch
    n = (b - a) / ell
    x = (ell * ell + r_outer * r_outer - r_inner * r_inner) / (2.0 * ell)
    rho = math.sqrt(max(r_outer * r_outer - x * x, 0.0))
    u = ch - (ch @ n) * n
    nu = float(np.linalg.norm(u))
    if nu < 1e-15:
        u = np.cross(n, [0.0, 0.0, 1.0])
        if np.linalg.norm(u) < 1e-12:
            u = np.cross(n, [1.0, 0.0, 0.0])
        nu = float(np.linalg.norm(u))
    p = a + x * n + rho * u / nu
    return _pull_inside(p, a, r_outer, b, r_inner)


def _pull_inside(p, a, ra, b, rb):
    for _ in range(3):
        da, db = np.linalg.norm(p - a), np.linalg.norm(p - b)
        if da > ra:
            p = a + (p - a) * (ra / da) * (1 - 1e-15)
        if db > rb:
            p = b + (p - b) * (rb / db) * (1 - 1e-15)
    return p


def location_gradient(psi: PowerAllocation, p_u, scenario: Scenario, links=None, strict_paper=False):
    """Gradient of R_L - R_U of the currently worst eavesdropper (nats per metre)."""
    links = all_links(scenario, p_u) if links is None else links
    obj = objective_from_links(psi, links)
    t = obj.worst_index + 1
    g = dRL_dz(psi, links[0]) * dz_dp(p_u, scenario.nodes[0].position, scenario.radio.alpha, strict_paper)
    g = g - dRU_dz(psi, links[t]) * dz_dp(p_u, scenario.nodes[t].position, scenario.radio.alpha, strict_paper)
    if scenario.altitude_fixed:
        g[2] = 0.0
    return g, obj


def solve_location_subproblem(psi: PowerAllocation, p_anchor, scenario: Scenario,
                              cfg: OptimizerConfig = OptimizerConfig(), d_delta: Optional[float] = None):
    """Maximizer of the linearized objective over the dispatch and trust balls."""
    p_anchor = as_position(p_anchor)
    step = (cfg.d_delta or scenario.d_delta) if d_delta is None else d_delta
    g, _ = location_gradient(psi, p_anchor, scenario, strict_paper=cfg.strict_paper_gradients)
    return two_ball_linear_max(g, scenario.uav_start, scenario.d_max, p_anchor, step)


def _location_ok(p, scenario):
    if scenario.min_altitude is not None and p[2] < scenario.min_altitude:
        return False
    try:
        all_links(scenario, p)
    except ValueError:
        return False
    return True


def _objective_at(psi, p, scenario):
    return objective_from_links(psi, all_links(scenario, p))


def algorithm2_alternating(scenario: Scenario, cfg: OptimizerConfig = OptimizerConfig()) -> OptTrace:
    """Alternate power optimization and trust-region location updates.

    Record 0 is the power-optimized dispatch location; each later record follows
    one location update and the power update at the new location. The loop stops
    when the exact objective gains less than ``eps2`` bits over an outer iteration.

    While the secrecy rate is nonpositive the gains are tiny even when the
    UAV is heading somewhere useful, so in that regime the loop keeps going for
    as long as the location still moves, and each power update restarts from
    water-filling at the new point.
    """
    p = np.array(scenario.uav_start, dtype=float)
    psi = waterfilling_init(scenario, p, cfg.psi_floor)
    trace = OptTrace()
    trace.waterfilling_objective_bits = _objective_at(psi, p, scenario).raw_bits
    psi, inner = algorithm1_power(psi, p, scenario, cfg)
    trace.inner_iterations.append(len(inner.records) - 1)
    trace.records.append(_outer_record(0, psi, p, scenario, inner.final.surrogate_bits))
    trace.termination = "iteration_cap"
    step = cfg.d_delta or scenario.d_delta
    for n in range(1, cfg.max_outer_iters + 1):
        current = trace.records[-1].objective_bits
        clamped = current <= 0.0
        g, _ = location_gradient(psi, p, scenario, strict_paper=cfg.strict_paper_gradients)
        moved = None
        trial = step
        for _ in range(cfg.backtrack_halvings + 1):
            cand = two_ball_linear_max(g, scenario.uav_start, scenario.d_max, p, trial)
            if _location_ok(cand, scenario):
                val = _objective_at(psi, cand, scenario).raw_bits
                if val >= current:
                    moved = cand
                    break
            trial *= 0.5
        p_next = p if moved is None else moved
        psi_start = waterfilling_init(scenario, p_next, cfg.psi_floor) if clamped else psi
        psi_next, inner = algorithm1_power(psi_start, p_next, scenario, cfg)
        rec = _outer_record(n, psi_next, p_next, scenario, inner.final.surrogate_bits)
        if rec.objective_bits < current - MONOTONE_SLACK_BITS:
            if clamped:
                psi_next, inner = algorithm1_power(psi, p_next, scenario, cfg)
                rec = _outer_record(n, psi_next, p_next, scenario, inner.final.surrogate_bits)
            if rec.objective_bits < current - MONOTONE_SLACK_BITS:
                trace.termination = "no_improvement"
                break
        trace.inner_iterations.append(len(inner.records) - 1)
        trace.records.append(rec)
        psi, p = psi_next, p_next
        if rec.objective_bits - current < cfg.eps2 and not (clamped and moved is not None):
            trace.termination = "converged"
            break
    return trace


def _outer_record(it, psi, p, scenario, surrogate_bits):
    obj = _objective_at(psi, p, scenario)
    return TraceRecord(it, np.array(psi.psi), np.array(p, dtype=float), obj.legit_bits, obj.eav_max_bits,
                       obj.raw_bits, surrogate_bits)


def with_uav_antennas(scenario: Scenario, K: int) -> Scenario:
    return scenario.replace(uav_array=replace(scenario.uav_array, element_count=int(K)))


# ---------------------------------------------------------------------------
# Exhaustive search


DEFAULT_MAX_CELLS = 2_000_000


@dataclass(frozen=True)
class GridResult:
    objective_bits: float
    psi: np.ndarray
    p_u: np.ndarray
    cells: int


def location_grid(scenario: Scenario, step: float) -> np.ndarray:
    """Lattice points of spacing ``step`` around the dispatch point inside the displacement ball."""
    if step <= 0:
        raise ValueError("grid step must be positive")
    n = int(math.floor(scenario.d_max / step + 1e-9))
    ax = np.arange(-n, n + 1) * step
    dz = np.zeros(1) if scenario.altitude_fixed else ax
    off = np.array(np.meshgrid(ax, ax, dz, indexing="ij")).reshape(3, -1).T
    off = off[np.linalg.norm(off, axis=1) <= scenario.d_max + 1e-9]
    pts = np.asarray(scenario.uav_start, dtype=float) + off
    if scenario.min_altitude is not None:
        pts = pts[pts[:, 2] >= scenario.min_altitude]
    return pts


def simplex_grid(r: int, step: float, floor: float = 1e-6) -> np.ndarray:
    """Nonincreasing power vectors on a lattice of spacing ``step`` with sum <= 1.

    Both rates are symmetric in the active powers, so sorted vectors cover the
    whole simplex. Zero entries are raised to ``floor``, taken from the largest.
    """
    units = int(round(1.0 / step))
    if units < 1 or abs(units * step - 1.0) > 1e-9:
        raise ValueError("simplex step must divide 1")
    out = []

    def rec(prefix, cap, left):
        if len(prefix) == r:
            out.append(prefix)
            return
        for v in range(min(cap, left), -1, -1):
            rec(prefix + [v], v, left - v)

    rec([], units, units)
    psi = np.array(out, dtype=float) / units
    raised = np.maximum(psi, floor)
    # the floor is paid for by the largest entry so the budget still holds
    raised[:, 0] -= np.maximum(raised.sum(axis=1) - 1.0, 0.0)
    return raised


def grid_search(scenario: Scenario, step: float = 1.0, simplex_step: float = 0.05,
                max_cells: int = DEFAULT_MAX_CELLS, psi_floor: float = 1e-6) -> GridResult:
    """Best exact objective over a location lattice times a power lattice."""
    pts = location_grid(scenario, step)
    r = active_count(scenario)
    powers = simplex_grid(r, simplex_step, psi_floor)
    cells = len(pts) * len(powers)
    if cells > max_cells:
        raise GridTooLarge(f"grid has {cells} cells, cap is {max_cells}")
    best = (-math.inf, None, None)
    full = np.zeros((len(powers), scenario.K))
    full[:, :r] = powers
    for p in pts:
        if not _location_ok(p, scenario):
            continue
        links = all_links(scenario, p)
        tables = [_row_tables(lk) for lk in links[1:]]
        for row in full:
            a = PowerAllocation(row)
            eav = max(eav_hmi_newton(a.active_values, lk, R) for lk, R in zip(links[1:], tables))
            val = legit_lower_nats(a, links[0]) - eav
            if val > best[0]:
                best = (val, row.copy(), p.copy())
    return GridResult(best[0] / LN2, best[1], best[2], cells)
