import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from secrecy_planner.cli_io import bundled_scenario_path, load_scenario
from secrecy_planner.errors import GridTooLarge, InfeasibleAnchor
from secrecy_planner.geometry import all_links
from secrecy_planner.optimizer import (
    FEAS_TOL,
    OptimizerConfig,
    algorithm1_power,
    algorithm2_alternating,
    grid_search,
    location_grid,
    project_floor_simplex,
    simplex_grid,
    solve_location_subproblem,
    taylor_RU_psi,
    two_ball_linear_max,
    waterfilling_init,
    with_uav_antennas,
)
from secrecy_planner.rates import PowerAllocation, eav_hmi_nats, secrecy_objective


def _load(name, K=None):
    sc = load_scenario(bundled_scenario_path(name))
    return sc if K is None else with_uav_antennas(sc, K)


vec3 = st.tuples(*[st.floats(-1.0, 1.0)] * 3)


@settings(max_examples=80, deadline=None)
@given(vec3, vec3, st.floats(0.5, 3.0), st.floats(0.05, 2.0), st.floats(0.0, 1.0))
def test_two_ball_maximizer_beats_sampled_points(c, direction, r_outer, r_inner, frac):
    c = np.asarray(c)
    a = np.zeros(3)
    d = np.asarray(direction)
    nd = np.linalg.norm(d)
    b = a if nd == 0 else d / nd * frac * r_outer
    p = two_ball_linear_max(c, a, r_outer, b, r_inner)
    assert np.linalg.norm(p - a) <= r_outer + 1e-9
    assert np.linalg.norm(p - b) <= r_inner + 1e-9
    rng = np.random.default_rng(0)
    pts = b + r_inner * rng.uniform(-1, 1, (4000, 3))
    ok = (np.linalg.norm(pts - a, axis=1) <= r_outer) & (np.linalg.norm(pts - b, axis=1) <= r_inner)
    if ok.any():
        assert c @ p >= np.max(pts[ok] @ c) - 1e-9


def test_two_ball_lens_case_analytic():
    # neither ball's own maximizer lies in the other, so the optimum sits on the intersection rim
    b = np.array([0.0, 0.9, 0.0])
    p = two_ball_linear_max([1.0, 0.0, 0.0], np.zeros(3), 1.0, b, 0.5)
    y = (0.81 + 1.0 - 0.25) / 1.8
    assert p == pytest.approx([math.sqrt(1 - y * y), y, 0.0], abs=1e-12)


def test_two_ball_concentric():
    p = two_ball_linear_max([0.0, 3.0, 4.0], np.zeros(3), 1.0, np.zeros(3), 1.0 + 1e-16)
    assert p == pytest.approx([0.0, 0.6, 0.8], abs=1e-12)


def test_two_ball_infeasible_anchor():
    with pytest.raises(InfeasibleAnchor):
        two_ball_linear_max([1, 0, 0], np.zeros(3), 1.0, np.array([3.0, 0, 0]), 0.5)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-2.0, 2.0), min_size=1, max_size=6), st.floats(0.0, 0.1))
def test_projection_is_feasible_and_nearest(v, floor):
    v = np.asarray(v)
    floor = min(floor, 0.9 / v.size)
    x = project_floor_simplex(v, floor)
    assert np.all(x >= floor - 1e-12)
    assert x.sum() <= 1 + 1e-9
    rng = np.random.default_rng(1)
    y = floor + rng.dirichlet(np.ones(v.size), 200) * (1 - floor * v.size) * rng.uniform(0, 1, (200, 1))
    assert np.linalg.norm(x - v) <= np.min(np.linalg.norm(y - v, axis=1)) + 1e-9


def test_waterfilling_on_budget():
    sc = _load("fig4a", 4)
    psi = waterfilling_init(sc)
    r = min(sc.K, sc.destination.n_antennas)
    assert psi.psi.sum() == pytest.approx(1.0)
    assert np.all(psi.psi[:r] > 0) and np.all(psi.psi[r:] == 0)
    # power is nonincreasing along the eigenchannel gains
    assert np.all(np.diff(psi.psi[:r]) <= 1e-12)


def test_anchor_tangency():
    sc = _load("fig5", 4)
    links = all_links(sc, sc.uav_start)
    phi = np.array([0.4, 0.3, 0.2, 0.1])
    for lk in links[1:4]:
        assert taylor_RU_psi(phi, lk, phi) == pytest.approx(eav_hmi_nats(PowerAllocation(phi), lk), abs=1e-9)


@pytest.mark.parametrize("K", [4, 6])
def test_algorithm1_ascends_and_converges(K):
    sc = _load("fig3", K)
    cfg = OptimizerConfig()
    psi, trace = algorithm1_power(waterfilling_init(sc), sc.uav_start, sc, cfg)
    obj = trace.objectives
    assert np.all(np.diff(obj) >= -1e-9)
    assert trace.termination == "converged"
    assert len(trace.records) - 1 <= 20
    sur = np.array([r.surrogate_bits for r in trace.records])
    # each surrogate solve starts from the previous exact value, which it can only raise
    assert np.all(sur[1:] >= obj[:-1] - 1e-9)
    assert psi.psi.sum() <= 1 + 1e-9


def test_location_step_stays_in_both_balls():
    sc = _load("fig4a", 4)
    psi = waterfilling_init(sc)
    anchor = sc.uav_start + np.array([3.0, 0.0, 1.0])
    p = solve_location_subproblem(psi, anchor, sc)
    assert np.linalg.norm(p - sc.uav_start) <= sc.d_max + FEAS_TOL
    assert np.linalg.norm(p - anchor) <= sc.d_delta + FEAS_TOL


@pytest.fixture(scope="module")
def fig4a_trace():
    sc = _load("fig4a", 4)
    return sc, algorithm2_alternating(sc, OptimizerConfig())


def test_algorithm2_feasible_and_monotone(fig4a_trace):
    sc, trace = fig4a_trace
    prev = None
    for rec in trace.records:
        assert np.linalg.norm(rec.p_u - sc.uav_start) <= sc.d_max + FEAS_TOL
        if prev is not None:
            assert np.linalg.norm(rec.p_u - prev.p_u) <= sc.d_delta + FEAS_TOL
            assert rec.objective_bits >= prev.objective_bits - 1e-6
        assert np.all(rec.psi >= 0) and rec.psi.sum() <= 1 + FEAS_TOL
        if sc.altitude_fixed:
            assert rec.p_u[2] == sc.uav_start[2]
        prev = rec
    assert trace.termination == "converged"
    assert len(trace.inner_iterations) == len(trace.records)


def test_algorithm2_records_match_exact_objective(fig4a_trace):
    sc, trace = fig4a_trace
    for rec in trace.records[:: max(1, len(trace.records) // 5)]:
        obj = secrecy_objective(PowerAllocation(rec.psi), rec.p_u, sc)
        assert rec.objective_bits == pytest.approx(obj.raw_bits, abs=1e-9)


def test_algorithm2_deterministic(fig4a_trace):
    sc, trace = fig4a_trace
    again = algorithm2_alternating(sc, OptimizerConfig())
    assert len(again.records) == len(trace.records)
    for a, b in zip(trace.records, again.records):
        assert np.array_equal(a.p_u, b.p_u) and np.array_equal(a.psi, b.psi)
        assert a.objective_bits == b.objective_bits


def test_fixed_altitude_respected():
    sc = _load("fig2_k4n4")
    assert sc.altitude_fixed
    trace = algorithm2_alternating(sc, OptimizerConfig(max_outer_iters=5))
    assert all(rec.p_u[2] == sc.uav_start[2] for rec in trace.records)


def test_zero_outer_iterations_gives_dispatch_point():
    sc = _load("fig4a", 2)
    trace = algorithm2_alternating(sc, OptimizerConfig(max_outer_iters=0))
    assert len(trace.records) == 1
    assert np.array_equal(trace.final.p_u, sc.uav_start)


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(eps1=0.0)
    cfg = OptimizerConfig.from_dict({"eps2": 1e-4, "unknown": 3})
    assert cfg.eps2 == 1e-4


@pytest.mark.parametrize("r,step", [(1, 0.25), (2, 0.1), (3, 0.2), (4, 0.25)])
def test_simplex_grid_covers_sorted_lattice(r, step):
    grid = simplex_grid(r, step, floor=0.0)
    units = round(1 / step)
    expected = {tuple(sorted(c, reverse=True)) for c in itertools.product(range(units + 1), repeat=r)
                if sum(c) <= units}
    got = {tuple(int(round(v * units)) for v in row) for row in grid}
    assert got == expected
    floored = simplex_grid(r, step, floor=1e-6)
    assert np.all(floored >= 1e-6 - 1e-15) and np.all(floored.sum(axis=1) <= 1 + 1e-12)
    with pytest.raises(ValueError):
        simplex_grid(r, 0.3)


def test_location_grid_inside_ball():
    sc = _load("fig4a", 2)
    pts = location_grid(sc, 2.0)
    assert np.all(np.linalg.norm(pts - sc.uav_start, axis=1) <= sc.d_max + 1e-9)
    assert any(np.array_equal(p, sc.uav_start) for p in pts)
    flat = location_grid(_load("fig2_k4n4"), 2.0)
    assert np.all(flat[:, 2] == 10.0)


def test_grid_search_small_and_cap():
    sc = _load("fig4a", 2)
    res = grid_search(sc, step=4.0, simplex_step=0.25)
    obj = secrecy_objective(PowerAllocation(res.psi), res.p_u, sc)
    assert res.objective_bits == pytest.approx(obj.raw_bits, abs=1e-9)
    with pytest.raises(GridTooLarge):
        grid_search(sc, step=0.1, simplex_step=0.01, max_cells=1000)
