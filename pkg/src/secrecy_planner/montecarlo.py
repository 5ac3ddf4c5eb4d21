"""Monte Carlo oracles for the closed forms and the fading studies.

Every estimator draws its samples in fixed-size blocks. Block ``b`` of stream
``s`` owns a generator seeded from ``SeedSequence(seed, spawn_key=(s, b))`` and
blocks are concatenated in order, so results do not depend on how blocks are
grouped into tasks or on the number of worker threads.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import HeavyTailWarning
from .geometry import LinkParams, Scenario, all_links, legit_eigen
from .rates import LN2, PowerAllocation, eav_hmi_nats, legit_lower_nats

BLOCK = 4096
KURTOSIS_LIMIT = 1e3
THREADS_ENV = "SECRECY_PLANNER_THREADS"

STREAM_CHANNEL = 0
STREAM_PSI = 1
STREAM_HAAR = 2


@dataclass(frozen=True)
class MCConfig:
    samples: int = 100_000
    seed: int = 0
    chunk_size: int = 16 * BLOCK
    threads: Optional[int] = None

    def __post_init__(self):
        if self.samples < 1 or self.chunk_size < 1:
            raise ValueError("samples and chunk_size must be positive")


@dataclass(frozen=True)
class MCSummary:
    mean: float
    standard_error: float
    samples_used: int

    @property
    def mean_bits(self):
        return self.mean / LN2

    @property
    def standard_error_bits(self):
        return self.standard_error / LN2


@dataclass(frozen=True)
class ECDFTable:
    config_id: str
    values: np.ndarray
    extras: dict = field(default_factory=dict)

    def rows(self):
        v = np.sort(self.values, kind="stable")
        p = np.arange(1, v.size + 1) / v.size
        return [(self.config_id, float(a), float(b)) for a, b in zip(v, p)]


def thread_count(requested: Optional[int] = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(THREADS_ENV)
    return max(1, int(env)) if env else 1


def block_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(block)))
    return np.random.Generator(np.random.PCG64(ss))


def run_blocks(draw: Callable[[np.random.Generator, int], np.ndarray], mc: MCConfig,
               stream: int = STREAM_CHANNEL, samples: Optional[int] = None) -> np.ndarray:
    """Evaluate ``draw(rng, count)`` on every block and concatenate in block order."""
    n = mc.samples if samples is None else samples
    counts = [BLOCK] * (n // BLOCK) + ([n % BLOCK] if n % BLOCK else [])
    per_task = max(1, mc.chunk_size // BLOCK)
    tasks = [list(range(i, min(i + per_task, len(counts)))) for i in range(0, len(counts), per_task)]

    def run(task):
        return [draw(block_rng(mc.seed, stream, b), counts[b]) for b in task]

    workers = thread_count(mc.threads)
    if workers == 1 or len(tasks) == 1:
        parts = [run(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, tasks))
    return np.concatenate([a for part in parts for a in part], axis=0)


def _summary(values) -> MCSummary:
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("inf")
    return MCSummary(float(v.mean()), se, int(v.size))


# ---------------------------------------------------------------------------
# Samplers


def complex_gaussian(rng, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def sample_rician(link: LinkParams, rng, size: Optional[int] = None) -> np.ndarray:
    """Unit-power Rician channel(s) sqrt(k/(k+1)) H_d + sqrt(1/(k+1)) H_s."""
    if link.los is None:
        raise ValueError("link carries no LoS matrix")
    shape = link.los.shape if size is None else (size,) + link.los.shape
    k = link.kappa
    return math.sqrt(k / (k + 1.0)) * link.los + math.sqrt(1.0 / (k + 1.0)) * complex_gaussian(rng, shape)


def sample_haar(K: int, rng, size: Optional[int] = None, columns: Optional[int] = None) -> np.ndarray:
    """Haar unitary matrices (or their first ``columns`` columns) by QR with phase correction."""
    cols = K if columns is None else columns
    shape = (K, cols) if size is None else (size, K, cols)
    Q, R = np.linalg.qr(complex_gaussian(rng, shape))
    d = np.diagonal(R, axis1=-2, axis2=-1)
    return Q * (d / np.abs(d))[..., None, :]


# ---------------------------------------------------------------------------
# Rate estimators


def _active_precoder(psi: PowerAllocation, V) -> np.ndarray:
    return np.asarray(V)[:, psi.active] * np.sqrt(psi.active_values)[None, :]


def _gram(link: LinkParams, VA, rng, count) -> np.ndarray:
    """Scaled Gram matrices (gamma/z) A^H A of the effective channel A = H V_a sqrt(Psi)."""
    H = sample_rician(link, rng, count)
    A = H @ VA
    snr = link.gamma_bar * (link.kappa + 1.0) / link.z
    return snr * (A.conj().swapaxes(-1, -2) @ A)


def _logdet_plus_identity(G) -> np.ndarray:
    r = G.shape[-1]
    sign, ld = np.linalg.slogdet(np.eye(r) + G)
    return ld


def mc_rate_true_samples(psi: PowerAllocation, V, link: LinkParams, mc: MCConfig) -> np.ndarray:
    if psi.r == 0:
        return np.zeros(mc.samples)
    VA = _active_precoder(psi, V)
    return run_blocks(lambda rng, n: _logdet_plus_identity(_gram(link, VA, rng, n)), mc)


def mc_rate_true(psi: PowerAllocation, V, link: LinkParams, mc: MCConfig) -> MCSummary:
    """Ergodic rate (nats) with the fixed precoder V, by sampling the fading."""
    return _summary(mc_rate_true_samples(psi, V, link, mc))


def _hmi_log_dets(psi_active, link: LinkParams, rng, count):
    K, r = link.n_tx, psi_active.size
    X = link.los * math.sqrt(link.kappa) if link.los is not None else None
    if X is None:
        raise ValueError("link carries no LoS matrix")
    X = X + complex_gaussian(rng, (count,) + X.shape)
    T = sample_haar(K, rng, count, columns=r) * np.sqrt(psi_active)[None, None, :]
    XT = X @ T
    G = (link.gamma_bar / link.z) * (XT.conj().swapaxes(-1, -2) @ XT)
    return _logdet_plus_identity(G)


def mc_rate_hmi(psi: PowerAllocation, link: LinkParams, mc: MCConfig) -> MCSummary:
    """log E det(I + (gamma_bar/z) X^H X T Psi T^H) over Haar T and Rician X.

    The mean is taken in linear scale after dividing every determinant by the
    largest one; the standard error of the log follows from the delta method.
    """
    psi_active = psi.active_values
    ld = run_blocks(lambda rng, n: _hmi_log_dets(psi_active, link, rng, n), mc, stream=STREAM_HAAR)
    top = float(ld.max())
    dets = np.exp(ld - top)
    m = float(dets.mean())
    sd = float(dets.std(ddof=1)) if dets.size > 1 else float("inf")
    kurt = float(stats.kurtosis(dets, fisher=False)) if dets.size > 3 else 0.0
    if kurt > KURTOSIS_LIMIT:
        warnings.warn(f"determinant kurtosis {kurt:.3g} exceeds {KURTOSIS_LIMIT:g}; "
                      "log-mean estimate may be unreliable", HeavyTailWarning, stacklevel=2)
    return MCSummary(math.log(m) + top, sd / (m * math.sqrt(dets.size)), int(dets.size))


def mc_inner_logdet_G(omega_hat, r: int, n_rx: int, mc: MCConfig) -> MCSummary:
    """E log det G for G = (M + H)^H (M + H), M = diag(sqrt(omega_hat)) padded to n_rx x r."""
    omega_hat = np.asarray(omega_hat, dtype=float)
    Mbar = np.zeros((n_rx, r))
    Mbar[np.arange(omega_hat.size), np.arange(omega_hat.size)] = np.sqrt(omega_hat)

    def draw(rng, n):
        X = Mbar + complex_gaussian(rng, (n, n_rx, r))
        return np.linalg.slogdet(X.conj().swapaxes(-1, -2) @ X)[1]

    return _summary(run_blocks(draw, mc))


# ---------------------------------------------------------------------------
# Studies


@dataclass(frozen=True)
class RateStudyConfig:
    """One relative-error study: a scenario evaluated at a fixed UAV position."""

    config_id: str
    scenario: Scenario
    p_u: Optional[np.ndarray] = None


def dirichlet_powers(K: int, r: int, count: int, seed: int) -> np.ndarray:
    rng = block_rng(seed, STREAM_PSI, 0)
    psi = np.zeros((count, K))
    psi[:, :r] = rng.dirichlet(np.ones(r), size=count)
    return psi


def _gram_samples(link: LinkParams, V, mc: MCConfig) -> np.ndarray:
    return run_blocks(lambda rng, n: _gram(link, V, rng, n), mc)


def _logdets_for_draws(G, psi_rows, batch=None):
    """Mean and SE of log det(I + S G S) per power draw, S = diag(sqrt(psi))."""
    means = np.empty(len(psi_rows))
    ses = np.empty(len(psi_rows))
    r = G.shape[-1]
    if batch is None:
        # keeps each stacked batch of matrices near 32 MB
        batch = max(1, 2_000_000 // (G.shape[0] * r * r))
    eye = np.eye(r)
    for start in range(0, len(psi_rows), batch):
        s = np.sqrt(psi_rows[start:start + batch])
        M = eye + G[None, :, :, :] * (s[:, None, :, None] * s[:, None, None, :])
        # M is Hermitian positive definite, so a Cholesky log-determinant suffices
        L = np.linalg.cholesky(M)
        ld = 2.0 * np.log(np.abs(np.diagonal(L, axis1=-2, axis2=-1))).sum(axis=-1)
        means[start:start + batch] = ld.mean(axis=1)
        ses[start:start + batch] = ld.std(axis=1, ddof=1) / math.sqrt(ld.shape[1])
    return means, ses


def rate_study(cfg: RateStudyConfig, mc: MCConfig, draws: int) -> dict:
    """Closed forms vs Monte Carlo true rates over random power draws.

    Channel samples are shared across draws (common random numbers). Returns
    per-draw arrays in nats: ``legit_closed``, ``legit_mc``, ``legit_se`` and for
    every eavesdropper ``eav_closed[t]``, ``eav_mc[t]``, ``eav_se[t]``.
    """
    sc = cfg.scenario
    p_u = sc.uav_start if cfg.p_u is None else cfg.p_u
    links = all_links(sc, p_u)
    K = sc.K
    r = links[0].s
    V = legit_eigen(sc, p_u, r).V[:, :r]
    psi = dirichlet_powers(K, r, draws, mc.seed)
    allocs = [PowerAllocation(np.minimum(row, 1.0) / max(1.0, row.sum())) for row in psi]
    out = {"psi": psi}
    G0 = _gram_samples(links[0], V, mc)
    out["legit_mc"], out["legit_se"] = _logdets_for_draws(G0, psi[:, :r])
    out["legit_closed"] = np.array([legit_lower_nats(a, links[0]) for a in allocs])
    out["eav_closed"], out["eav_mc"], out["eav_se"] = [], [], []
    for t, lk in enumerate(links[1:], start=1):
        G = _gram_samples(lk, V, MCConfig(mc.samples, mc.seed + 7919 * t, mc.chunk_size, mc.threads))
        m, se = _logdets_for_draws(G, psi[:, :r])
        out["eav_mc"].append(m)
        out["eav_se"].append(se)
        out["eav_closed"].append(np.array([eav_hmi_nats(a, lk) for a in allocs]))
    return out


def ecdf_relative_errors(configs: Sequence[RateStudyConfig], mc: MCConfig, draws: int = 1000):
    """Relative errors (closed - MC) / MC per configuration, as ECDF tables.

    Returns ``(tables, studies)``; table ids are ``<config>/R_L`` and ``<config>/R_U<t>``.
    """
    tables, studies = [], {}
    for cfg in configs:
        st = rate_study(cfg, mc, draws)
        studies[cfg.config_id] = st
        err = (st["legit_closed"] - st["legit_mc"]) / st["legit_mc"]
        tables.append(ECDFTable(f"{cfg.config_id}/R_L", err))
        for t, (c, m) in enumerate(zip(st["eav_closed"], st["eav_mc"]), start=1):
            tables.append(ECDFTable(f"{cfg.config_id}/R_U{t}", (c - m) / m))
    return tables, studies


def mc_instant_secrecy(psi: PowerAllocation, p_u, scenario: Scenario, mc: MCConfig) -> np.ndarray:
    """Per-draw instantaneous secrecy rate in bits (unclamped)."""
    links = all_links(scenario, p_u)
    V = legit_eigen(scenario, p_u, links[0].s).V
    if psi.r == 0:
        return np.zeros(mc.samples)
    VA = _active_precoder(psi, V)

    def draw(rng, n):
        c = [_logdet_plus_identity(_gram(lk, VA, rng, n)) for lk in links]
        return c[0] - np.max(np.vstack(c[1:]), axis=0)

    return run_blocks(draw, mc) / LN2


def mc_instant_secrecy_ecdf(psi: PowerAllocation, p_u, scenario: Scenario, mc: MCConfig,
                            config_id: str = "instant_secrecy") -> ECDFTable:
    """ECDF of the clamped instantaneous secrecy rate with outage and spread summaries."""
    raw = mc_instant_secrecy(psi, p_u, scenario, mc)
    clamped = np.maximum(raw, 0.0)
    mean = float(clamped.mean())
    extras = {
        "outage_fraction": float(np.mean(raw <= 0.0)),
        "mean_bits": mean,
        "within_2_5_bits": float(np.mean(np.abs(clamped - mean) <= 2.5)),
        "within_2_bits": float(np.mean(np.abs(clamped - mean) <= 2.0)),
    }
    return ECDFTable(config_id, clamped, extras)
