import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from secrecy_planner.cli_io import bundled_scenario_path, load_scenario
from secrecy_planner.errors import CoincidentNodes, DuplicatePosition, NoDestination, NonPositiveParameter
from secrecy_planner.geometry import (
    AntennaArray,
    all_links,
    antenna_positions,
    legit_eigen,
    link_params,
    los_matrix,
    path_gain_z,
    synthetic_link,
    validate_scenario,
)


@pytest.fixture(scope="module")
def fig4a():
    return load_scenario(bundled_scenario_path("fig4a"))


coord = st.floats(-8.0, 8.0, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(coord, coord, st.floats(2.0, 15.0))
def test_los_entries_have_unit_modulus(fig4a, x, y, h):
    for i in range(len(fig4a.nodes)):
        H = los_matrix(fig4a, i, [x, y, h])
        assert np.allclose(np.abs(H), 1.0, atol=1e-12, rtol=0)


@settings(max_examples=25, deadline=None)
@given(st.tuples(coord, coord, st.floats(0.0, 5.0)))
def test_common_translation_leaves_links_unchanged(fig4a, shift):
    shift = np.asarray(shift)
    moved = fig4a.replace(
        uav_start=fig4a.uav_start + shift,
        nodes=tuple(dataclasses.replace(n, position=n.position + shift) for n in fig4a.nodes),
    )
    p = np.array([1.5, -2.0, 11.0])
    for a, b in zip(all_links(fig4a, p), all_links(moved, p + shift)):
        assert (a.s, a.t, a.q, a.n_rx, a.n_tx) == (b.s, b.t, b.q, b.n_rx, b.n_tx)
        assert b.gamma_bar == pytest.approx(a.gamma_bar, rel=1e-12)
        assert b.z == pytest.approx(a.z, rel=1e-12)
        assert np.allclose(b.omega, a.omega, rtol=1e-9, atol=1e-12 * a.omega.max())


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 100.0), st.floats(1e-3, 50.0), st.floats(2.0, 4.0))
def test_path_gain_increases_with_distance(d, extra, alpha):
    origin = np.zeros(3)
    near = path_gain_z([d, 0, 0], origin, alpha)
    far = path_gain_z([d + extra, 0, 0], origin, alpha)
    assert far > near
    assert near == pytest.approx(d ** alpha, rel=1e-12)


def test_eigen_reconstruction(fig4a):
    rng = np.random.default_rng(3)
    for _ in range(10):
        p = fig4a.uav_start + rng.uniform(-4, 4, 3)
        for i, node in enumerate(fig4a.nodes):
            H = los_matrix(fig4a, i, p)
            gram = node.rician_kappa * H.conj().T @ H
            lk = link_params(fig4a, i, p)
            _, sv, Vh = np.linalg.svd(np.sqrt(node.rician_kappa) * H, full_matrices=True)
            V = Vh.conj().T
            full = np.zeros(fig4a.K)
            full[: sv.size] = sv ** 2
            rec = V @ np.diag(full) @ V.conj().T
            assert np.linalg.norm(rec - gram) / np.linalg.norm(gram) <= 1e-9
            # thresholded eigenvalues agree with the Gram spectrum on the retained rank
            top = np.sort(np.linalg.eigvalsh(gram))[::-1][: lk.q]
            assert np.allclose(lk.omega[: lk.q], top, rtol=1e-9)


def test_precoder_diagonalizes_destination_gram(fig4a):
    p = fig4a.uav_start
    eig = legit_eigen(fig4a, p)
    H = los_matrix(fig4a, 0, p)
    gram = fig4a.destination.rician_kappa * H.conj().T @ H
    d = eig.V.conj().T @ gram @ eig.V
    off = d - np.diag(np.diagonal(d))
    assert np.linalg.norm(off) <= 1e-9 * np.linalg.norm(gram)


def test_link_scaling(fig4a):
    lk = link_params(fig4a, 0, fig4a.uav_start)
    node = fig4a.destination
    radio = fig4a.radio
    assert lk.gamma_bar == pytest.approx(radio.p_max * radio.c_p / radio.noise_nu / (node.rician_kappa + 1))
    dist = np.linalg.norm(fig4a.uav_start - node.position)
    assert lk.z == pytest.approx(dist ** radio.alpha, rel=1e-12)
    assert lk.s == min(node.n_antennas, fig4a.K)


def test_circular_array_geometry():
    arr = AntennaArray("circular", 6, radius_m=0.6)
    pos = antenna_positions(arr, [1.0, 2.0, 3.0])
    assert np.allclose(np.linalg.norm(pos - [1, 2, 3], axis=1), 0.6)
    assert np.allclose(pos[:, 2], 3.0)
    lin = antenna_positions(AntennaArray("linear", 4, spacing_m=0.12), [0, 0, 0])
    assert np.allclose(np.diff(lin[:, 0]), 0.12)
    assert np.allclose(lin.mean(axis=0), 0.0)


def test_synthetic_link_thresholds_rank():
    lk = synthetic_link(4, 3, [2.0, 1e-9, 0.5])
    assert lk.q == 2
    assert np.allclose(lk.omega, [2.0, 0.5, 0.0])
    with pytest.raises(ValueError):
        synthetic_link(2, 2, [1.0, 1.0, 1.0])


def test_validation_errors(fig4a):
    with pytest.raises(NoDestination):
        validate_scenario(fig4a.replace(nodes=fig4a.nodes[1:] + fig4a.nodes[1:2]))
    with pytest.raises(DuplicatePosition):
        clash = dataclasses.replace(fig4a.nodes[1], position=fig4a.nodes[0].position.copy())
        validate_scenario(fig4a.replace(nodes=(fig4a.nodes[0], clash)))
    with pytest.raises(NonPositiveParameter):
        validate_scenario(fig4a.replace(d_max=0.0))
    with pytest.raises(NonPositiveParameter):
        validate_scenario(fig4a.replace(radio=dataclasses.replace(fig4a.radio, p_max=-1.0)))
    with pytest.raises(CoincidentNodes):
        link_params(fig4a, 0, fig4a.destination.position)


def test_destination_reordered_first(fig4a):
    shuffled = fig4a.replace(nodes=fig4a.nodes[1:] + fig4a.nodes[:1])
    out = validate_scenario(shuffled)
    assert out.nodes[0].role == "destination"
    assert all(n.role == "eavesdropper" for n in out.nodes[1:])
