"""Scenario description, antenna layouts, LoS channel matrices and per-link parameters."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CoincidentNodes, DuplicatePosition, NoDestination, NonPositiveParameter, ScenarioError

RANK_RTOL = 1e-6
COINCIDENT_TOL = 1e-9


def as_position(p) -> np.ndarray:
    """Return ``p`` as a finite float array of shape (3,)."""
    arr = np.asarray(p, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"position must have 3 coordinates, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("position coordinates must be finite")
    return arr


@dataclass(frozen=True)
class AntennaArray:
    kind: str
    element_count: int
    radius_m: Optional[float] = None
    spacing_m: Optional[float] = None
    azimuth_rad: float = 0.0
    normal: tuple = (0.0, 0.0, 1.0)

    def validate(self, where="array"):
        if self.kind not in ("circular", "linear"):
            raise ScenarioError(f"unknown array kind {self.kind!r}", f"{where}.kind")
        if int(self.element_count) != self.element_count or self.element_count < 1:
            raise NonPositiveParameter("element count must be a positive integer", f"{where}.element_count")
        size = self.radius_m if self.kind == "circular" else self.spacing_m
        name = "radius_m" if self.kind == "circular" else "spacing_m"
        if size is None or not np.isfinite(size) or size <= 0:
            raise NonPositiveParameter("must be positive", f"{where}.{name}")
        if self.kind == "circular" and np.linalg.norm(self.normal) == 0:
            raise ScenarioError("normal axis must be nonzero", f"{where}.normal")


@dataclass(frozen=True)
class NodeSpec:
    role: str
    position: np.ndarray
    antennas: AntennaArray
    rician_kappa: float

    @property
    def n_antennas(self):
        return self.antennas.element_count


@dataclass(frozen=True)
class RadioParams:
    c_p: float
    alpha: float
    noise_nu: float
    p_max: float
    wavelength_m: float
    phase_model: str = "linear_distance"

    @property
    def gamma(self):
        return self.p_max * self.c_p / self.noise_nu


@dataclass(frozen=True)
class Scenario:
    uav_start: np.ndarray
    uav_array: AntennaArray
    d_max: float
    d_delta: float
    altitude_fixed: bool
    nodes: tuple
    radio: RadioParams
    min_altitude: Optional[float] = None

    @property
    def K(self):
        return self.uav_array.element_count

    @property
    def destination(self) -> NodeSpec:
        return self.nodes[0]

    @property
    def eavesdroppers(self):
        return self.nodes[1:]

    @property
    def T(self):
        return len(self.nodes) - 1

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class LinkParams:
    """Derived quantities of one UAV-to-receiver link.

    ``omega`` holds the eigenvalues of the scaled LoS Gram matrix, already
    thresholded so that only the first ``q`` entries are nonzero.
    """

    gamma_bar: float
    z: float
    s: int
    t: int
    q: int
    omega: np.ndarray
    n_rx: int
    n_tx: int
    kappa: float = 0.0
    los: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def snr(self):
        return self.gamma_bar / self.z

    @property
    def omega_nonzero(self):
        return self.omega[: self.q]

    def with_z(self, z) -> "LinkParams":
        return dataclasses.replace(self, z=float(z))


@dataclass(frozen=True)
class LegitEigen:
    V: np.ndarray
    omega: np.ndarray
    q: int
    r: int

    @property
    def q_hat(self):
        return min(self.q, self.r)

    @property
    def omega_hat(self):
        return self.omega[: self.q_hat]


def validate_scenario(raw: Scenario) -> Scenario:
    """Check invariants and return the scenario with the destination first."""
    start = as_position(raw.uav_start)
    if start[2] <= 0:
        raise NonPositiveParameter("UAV start must be strictly above ground", "uav.start")
    raw.uav_array.validate("uav.array")
    for name in ("d_max", "d_delta"):
        v = getattr(raw, name)
        if not np.isfinite(v) or v <= 0:
            raise NonPositiveParameter("must be positive", f"uav.{name}")
    radio = raw.radio
    for name in ("c_p", "noise_nu", "p_max", "wavelength_m"):
        v = getattr(radio, name)
        if not np.isfinite(v) or v <= 0:
            raise NonPositiveParameter("must be positive", f"radio.{name}")
    if not radio.alpha >= 2:
        raise NonPositiveParameter("path-loss exponent must be >= 2", "radio.alpha")
    if radio.phase_model not in ("linear_distance", "sqrt_distance"):
        raise ScenarioError(f"unknown phase model {radio.phase_model!r}", "radio.phase_model")

    nodes = list(raw.nodes)
    dests = [i for i, n in enumerate(nodes) if n.role == "destination"]
    if len(dests) != 1:
        raise NoDestination(f"expected exactly one destination, found {len(dests)}", "nodes")
    for i, n in enumerate(nodes):
        if n.role not in ("destination", "eavesdropper"):
            raise ScenarioError(f"unknown role {n.role!r}", f"nodes[{i}].role")
        if not n.rician_kappa >= 0:
            raise NonPositiveParameter("Rician factor must be nonnegative", f"nodes[{i}].kappa")
        n.antennas.validate(f"nodes[{i}].array")
        p = as_position(n.position)
        if p[2] < 0:
            raise ScenarioError("ground nodes need z >= 0", f"nodes[{i}].position")
        if np.linalg.norm(p - start) < COINCIDENT_TOL:
            raise DuplicatePosition("node coincides with the UAV start", f"nodes[{i}].position")
        for j in range(i):
            if np.linalg.norm(p - as_position(nodes[j].position)) < COINCIDENT_TOL:
                raise DuplicatePosition(f"same position as nodes[{j}]", f"nodes[{i}].position")
    if len(nodes) < 2:
        raise ScenarioError("at least one eavesdropper is required", "nodes")
    if raw.min_altitude is not None and raw.min_altitude < 0:
        raise NonPositiveParameter("must be nonnegative", "uav.min_altitude")

    d = dests[0]
    ordered = [nodes[d]] + nodes[:d] + nodes[d + 1:]
    ordered = tuple(dataclasses.replace(n, position=as_position(n.position)) for n in ordered)
    return dataclasses.replace(raw, uav_start=start, nodes=ordered)


def distance(p_u, p_tau) -> float:
    d = float(np.linalg.norm(as_position(p_u) - as_position(p_tau)))
    if d < COINCIDENT_TOL:
        raise CoincidentNodes(f"UAV and receiver coincide (distance {d:.3g} m)")
    return d


def path_gain_z(p_u, p_tau, alpha) -> float:
    """Path-loss denominator ``||p_u - p_tau||**alpha``."""
    return distance(p_u, p_tau) ** alpha


def _plane_basis(normal):
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = ref - n * (ref @ n)
    u /= np.linalg.norm(u)
    return u, np.cross(n, u)


def antenna_positions(array: AntennaArray, center) -> np.ndarray:
    """Element coordinates, shape (element_count, 3)."""
    c = as_position(center)
    n = array.element_count
    if array.kind == "circular":
        u, v = _plane_basis(array.normal)
        ang = 2 * np.pi * np.arange(n) / n + array.azimuth_rad
        return c + array.radius_m * (np.outer(np.cos(ang), u) + np.outer(np.sin(ang), v))
    direction = np.array([np.cos(array.azimuth_rad), np.sin(array.azimuth_rad), 0.0])
    offsets = (np.arange(n) - (n - 1) / 2) * array.spacing_m
    return c + np.outer(offsets, direction)


def los_matrix(scenario: Scenario, node_index: int, p_u) -> np.ndarray:
    """Unit-modulus LoS matrix, shape (N, K); entry (n, k) pairs receive element n with UAV element k."""
    node = scenario.nodes[node_index]
    p_u = as_position(p_u)
    distance(p_u, node.position)
    tx = antenna_positions(scenario.uav_array, p_u)
    rx = antenna_positions(node.antennas, node.position)
    r = np.linalg.norm(rx[:, None, :] - tx[None, :, :], axis=-1)
    if scenario.radio.phase_model == "sqrt_distance":
        r = np.sqrt(r)
    return np.exp(1j * (2 * np.pi / scenario.radio.wavelength_m) * r)


def _scaled_svd(scenario, node_index, p_u):
    node = scenario.nodes[node_index]
    H = los_matrix(scenario, node_index, p_u)
    Hbar = np.sqrt(node.rician_kappa) * H
    _, sv, Vh = np.linalg.svd(Hbar, full_matrices=True)
    omega = sv ** 2
    q = rank_of(omega)
    omega = np.where(np.arange(omega.size) < q, omega, 0.0)
    return H, omega, q, Vh.conj().T


def rank_of(omega) -> int:
    omega = np.asarray(omega, dtype=float)
    if omega.size == 0 or omega[0] <= 0:
        return 0
    return int(np.count_nonzero(omega > omega[0] * RANK_RTOL))


def legit_eigen(scenario: Scenario, p_u, r: Optional[int] = None) -> LegitEigen:
    """Eigenbasis of the destination's scaled LoS Gram matrix (the precoder)."""
    node = scenario.destination
    s = min(node.n_antennas, scenario.K)
    r = s if r is None else int(r)
    if not 1 <= r <= s:
        raise ValueError(f"active channel count r={r} must lie in [1, {s}]")
    _, omega, q, V = _scaled_svd(scenario, 0, p_u)
    return LegitEigen(V=V, omega=omega, q=q, r=r)


def link_params(scenario: Scenario, node_index: int, p_u) -> LinkParams:
    node = scenario.nodes[node_index]
    K, N = scenario.K, node.n_antennas
    H, omega, q, _ = _scaled_svd(scenario, node_index, p_u)
    return LinkParams(
        gamma_bar=scenario.radio.gamma / (node.rician_kappa + 1.0),
        z=path_gain_z(p_u, node.position, scenario.radio.alpha),
        s=min(N, K),
        t=max(N, K),
        q=q,
        omega=omega,
        n_rx=N,
        n_tx=K,
        kappa=float(node.rician_kappa),
        los=H,
    )


def all_links(scenario: Scenario, p_u) -> list:
    return [link_params(scenario, i, p_u) for i in range(len(scenario.nodes))]


def synthetic_link(K, N, omega=(), gamma_bar=1.0, z=1.0, kappa=0.0, los=None) -> LinkParams:
    """Link with prescribed LoS eigenvalues, for studies detached from geometry."""
    s = min(K, N)
    om = np.zeros(s)
    given = np.sort(np.asarray(omega, dtype=float))[::-1]
    if given.size > s:
        raise ValueError("more LoS eigenvalues than min(N, K)")
    om[: given.size] = given
    q = rank_of(om)
    om[q:] = 0.0
    return LinkParams(gamma_bar=float(gamma_bar), z=float(z), s=s, t=max(K, N), q=q, omega=om,
                      n_rx=N, n_tx=K, kappa=float(kappa), los=los)


def los_with_eigenvalues(K, N, omega, rng) -> np.ndarray:
    """Random N x K matrix whose Gram eigenvalues are ``omega`` (padded with zeros)."""
    s = min(K, N)
    sv = np.zeros(s)
    om = np.asarray(omega, dtype=float)
    sv[: om.size] = np.sqrt(om)
    U = _random_unitary(N, rng)
    W = _random_unitary(K, rng)
    S = np.zeros((N, K))
    S[np.arange(s), np.arange(s)] = sv
    return U @ S @ W.conj().T


def _random_unitary(n, rng):
    Z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    Q, R = np.linalg.qr(Z)
    d = np.diagonal(R)
    return Q * (d / np.abs(d))


def ensure_sequence(nodes: Sequence[NodeSpec]) -> tuple:
    return tuple(nodes)
