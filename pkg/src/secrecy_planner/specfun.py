"""Special functions and overflow-safe determinant kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg, special

from .errors import DomainError, NonConvergence, SingularToTolerance

PIVOT_RTOL = 1e-13
SERIES_RTOL = 1e-14
SERIES_EXTRA_TERMS = 300
EXACT_BINOMIAL_MAX = 60


def _check_positive(x, name):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} requires a finite argument > 0, got {x!r}")
    return arr


def log_gamma(x):
    """ln Gamma(x) for x > 0."""
    arr = _check_positive(x, "log_gamma")
    out = special.gammaln(arr)
    return float(out) if out.ndim == 0 else out


def digamma(x):
    arr = _check_positive(x, "digamma")
    out = special.digamma(arr)
    return float(out) if out.ndim == 0 else out


def reg_lower_inc_gamma(k, x):
    """Regularized lower incomplete gamma P(k, x) = gamma(k, x) / Gamma(k)."""
    k_arr = np.asarray(k)
    x_arr = np.asarray(x, dtype=float)
    if np.any(k_arr < 1) or np.any(k_arr != np.round(k_arr)):
        raise DomainError(f"k must be a positive integer, got {k!r}")
    if not np.all(np.isfinite(x_arr)) or np.any(x_arr < 0):
        raise DomainError(f"x must be finite and >= 0, got {x!r}")
    out = special.gammainc(k_arr.astype(float), x_arr)
    return float(out) if out.ndim == 0 else out


def h_series(i: int, omega_j: float, dof: int, q_hat: int) -> float:
    """``omega_j**(i-1) * sum_{k>=1} P(k, omega_j) / (dof - q_hat + i + k - 1)``.

    ``dof`` is the receive dimension of the noncentral Wishart factor.
    """
    if not 1 <= i <= q_hat or q_hat > dof:
        raise DomainError(f"need 1 <= i <= q_hat <= dof, got i={i}, q_hat={q_hat}, dof={dof}")
    w = float(_check_positive(omega_j, "h_series"))
    base = dof - q_hat + i - 1
    cap = math.ceil(w) + SERIES_EXTRA_TERMS
    total = 0.0
    k = 1
    while True:
        term = special.gammainc(k, w) / (base + k)
        total += term
        if term <= SERIES_RTOL * total and k > w:
            break
        k += 1
        if k > cap:
            raise NonConvergence(f"h_series did not converge within {cap} terms at omega={w}")
    return w ** (i - 1) * total


def binomial(n: int, k: int) -> float:
    if not (0 <= k <= n) or int(n) != n or int(k) != k:
        raise DomainError(f"binomial needs integers 0 <= k <= n, got ({n}, {k})")
    n, k = int(n), int(k)
    if n <= EXACT_BINOMIAL_MAX:
        return float(math.comb(n, k))
    return math.exp(special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1))


def log_binomial(n: int, k: int) -> float:
    if n <= EXACT_BINOMIAL_MAX:
        return math.log(binomial(n, k))
    return float(special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1))


@dataclass(frozen=True)
class ScaledMatrix:
    """Matrix stored as ``body * exp(row_log_scales[:, None] + column_log_scales[None, :])``."""

    body: np.ndarray
    column_log_scales: np.ndarray
    row_log_scales: Optional[np.ndarray] = None

    def __post_init__(self):
        body = np.asarray(self.body, dtype=float)
        object.__setattr__(self, "body", body)
        object.__setattr__(self, "column_log_scales", np.asarray(self.column_log_scales, dtype=float))
        rows = np.zeros(body.shape[0]) if self.row_log_scales is None else np.asarray(self.row_log_scales, dtype=float)
        object.__setattr__(self, "row_log_scales", rows)
        if body.ndim != 2 or self.column_log_scales.shape != (body.shape[1],) or rows.shape != (body.shape[0],):
            raise ValueError("scale vectors must match the body shape")
        if not np.all(np.isfinite(body)):
            raise ValueError("ScaledMatrix body must be finite")

    @classmethod
    def plain(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(m, np.zeros(m.shape[1]), np.zeros(m.shape[0]))

    def dense(self) -> np.ndarray:
        return self.body * np.exp(self.row_log_scales[:, None] + self.column_log_scales[None, :])

    @property
    def total_log_scale(self) -> float:
        return float(self.row_log_scales.sum() + self.column_log_scales.sum())


class LogDet(tuple):
    """``(sign, log_abs)`` pair that also carries an ``ill_conditioned`` flag."""

    def __new__(cls, sign, log_abs, ill_conditioned=False):
        obj = super().__new__(cls, (sign, log_abs))
        obj.ill_conditioned = bool(ill_conditioned)
        return obj

    @property
    def sign(self):
        return self[0]

    @property
    def log_abs(self):
        return self[1]


def signed_log_det(m, strict: bool = False) -> LogDet:
    """Sign and log-magnitude of the determinant via pivoted LU.

    Accepts a :class:`ScaledMatrix` or a plain array. With ``strict`` a pivot
    ratio below ``PIVOT_RTOL`` raises :class:`SingularToTolerance`.
    """
    if not isinstance(m, ScaledMatrix):
        m = ScaledMatrix.plain(m)
    body = m.body
    if body.shape[0] != body.shape[1]:
        raise ValueError(f"determinant of a non-square {body.shape} matrix")
    if body.shape[0] == 0:
        return LogDet(1, 0.0)
    lu, piv = linalg.lu_factor(body, check_finite=True)
    diag = np.diagonal(lu)
    mags = np.abs(diag)
    if np.any(mags == 0):
        if strict:
            raise SingularToTolerance("matrix is exactly singular")
        return LogDet(0, -np.inf, True)
    ill = bool(mags.min() < PIVOT_RTOL * mags.max())
    if ill and strict:
        raise SingularToTolerance(f"pivot ratio {mags.min() / mags.max():.3g} below {PIVOT_RTOL}")
    swaps = int(np.count_nonzero(piv != np.arange(piv.size)))
    sign = (-1) ** swaps * int(np.prod(np.sign(diag)))
    return LogDet(sign, float(np.log(mags).sum()) + m.total_log_scale, ill)


def complete_homogeneous(nodes, degree: int) -> np.ndarray:
    """Table ``H[k, p] = h_p(nodes[0..k])`` of complete homogeneous symmetric polynomials.

    Shape (len(nodes), degree + 1). These are the divided differences of the
    monomial ``x**(p + k)`` on the first ``k + 1`` nodes, well defined at
    repeated nodes.
    """
    x = np.asarray(nodes, dtype=float)
    H = np.zeros((x.size, degree + 1))
    row = np.ones(degree + 1)
    for k, xk in enumerate(x):
        if k == 0:
            row = xk ** np.arange(degree + 1)
        else:
            row = row.copy()
            for p in range(1, degree + 1):
                row[p] += xk * row[p - 1]
        H[k] = row
    return H


def complete_homogeneous_ext(nodes, extra: float, degree: int) -> np.ndarray:
    """``h_p(nodes..., extra)`` for p = 0..degree, given the nodes' table row."""
    base = complete_homogeneous(nodes, degree)[-1] if len(nodes) else np.eye(1, degree + 1)[0]
    out = base.copy()
    for p in range(1, degree + 1):
        out[p] += extra * out[p - 1]
    return out


CLUSTER_GAP = 1.0


def cluster_nodes(nodes, gap: float = CLUSTER_GAP) -> list:
    """Group node indices into chains whose consecutive sorted gaps are below ``gap``."""
    nodes = np.asarray(nodes, dtype=float)
    order = np.argsort(nodes, kind="stable")
    groups, current = [], [int(order[0])] if nodes.size else []
    for a, b in zip(order[:-1], order[1:]):
        if nodes[b] - nodes[a] < gap:
            current.append(int(b))
        else:
            groups.append(current)
            current = [int(b)]
    if current:
        groups.append(current)
    return groups


def series_divided_differences(log_coef, nodes, weights=None, gap: float = CLUSTER_GAP):
    """Scaled divided differences of power series with positive coefficients.

    ``log_coef(m)`` returns the log-coefficients, shape (F, len(m)), of F series
    f_i(v) = sum_m c_i[m] v**m. Nodes are grouped with :func:`cluster_nodes`;
    inside each group column j holds the divided difference of order j on the
    group's first j + 1 nodes, so repeated nodes are handled exactly and
    widely separated nodes never share a column. Each column carries its own
    log scale. ``weights(m)``, if given, multiplies the coefficients by a signed
    factor of the same shape and yields a second table with identical scales.

    Returns ``(table, weighted_table_or_None, column_log_scales)``.
    """
    nodes = np.asarray(nodes, dtype=float)
    n = nodes.size
    w_all = float(nodes.max()) if n else 0.0
    M = n + int(math.ceil(w_all + 12.0 * math.sqrt(max(w_all, 0.0)))) + 60
    m = np.arange(M + 1)
    logc = np.asarray(log_coef(m), dtype=float)
    wts = None if weights is None else np.asarray(weights(m), dtype=float)
    F = logc.shape[0]
    table = np.zeros((F, n))
    wtable = None if wts is None else np.zeros((F, n))
    scales = np.zeros(n)
    col = 0
    for group in cluster_nodes(nodes, gap):
        g = nodes[group]
        wc = float(g.max())
        if wc > 0:
            H = complete_homogeneous(g / wc, M)
            logw = math.log(wc)
        for k in range(len(group)):
            if wc > 0:
                h = H[k, : M + 1 - k]
                ok = h > 0
                mm = m[k:][ok]
                lt = logc[:, mm] + (mm - k)[None, :] * logw + np.log(h[ok])[None, :]
                sel = mm
            else:
                lt = logc[:, k:k + 1]
                sel = np.array([k])
            top = float(lt.max())
            e = np.exp(lt - top)
            table[:, col] = e.sum(axis=1)
            if wtable is not None:
                wtable[:, col] = (e * wts[:, sel]).sum(axis=1)
            scales[col] = top
            col += 1
    return table, wtable, scales
