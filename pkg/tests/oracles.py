"""Independent reference computations used only by the test suite."""

import math
from itertools import combinations

import numpy as np


def elementary_symmetric(x, k):
    x = list(x)
    if k == 0:
        return 1.0
    if k > len(x):
        return 0.0
    return float(sum(np.prod(c) for c in combinations(x, k)))


def exact_hmi(x, omega, K, N):
    """log E det(I + X^H X T diag(x) T^H) by finite expansion.

    Uses E_T det(I + A T B T^H) = sum_k e_k(a) e_k(b) / C(K, k) for Haar T and the
    expected elementary symmetric functions of a noncentral complex Wishart
    matrix, which are polynomial in its LoS eigenvalues.
    """
    r, q = len(x), len(omega)
    total = 0.0
    for k in range(min(r, N, K) + 1):
        ck = 0.0
        for j in range(min(k, q) + 1):
            ck += (math.factorial(k - j) * math.comb(N - j, k - j) * math.comb(K - j, k - j)
                   * elementary_symmetric(omega, j))
        total += elementary_symmetric(x, k) * ck / math.comb(K, k)
    return math.log(total)


def cofactor_det(m):
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    if n == 1:
        return m[0, 0]
    return sum((-1) ** j * m[0, j] * cofactor_det(np.delete(m[1:], j, axis=1)) for j in range(n))


def lower_gamma_series(k, x, terms=400):
    """P(k, x) by the power series e^{-x} sum_n x^{k+n} / Gamma(k+n+1)."""
    total, term = 0.0, math.exp(-x + k * math.log(x) - math.lgamma(k + 1)) if x > 0 else 0.0
    for n in range(terms):
        total += term
        term *= x / (k + n + 1)
    return total


def upper_gamma_continued_fraction(k, x, terms=400):
    """Q(k, x) by the Lentz continued fraction (valid for x > k + 1)."""
    tiny = 1e-300
    b = x + 1 - k
    c = 1 / tiny
    d = 1 / b
    h = d
    for i in range(1, terms):
        an = -i * (i - k)
        b += 2
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1 / d
        h *= d * c
    return math.exp(-x + k * math.log(x) - math.lgamma(k)) * h


def central_difference(f, x, h=None):
    x = float(x)
    h = 1e-6 * max(1.0, abs(x)) if h is None else h
    return (f(x + h) - f(x - h)) / (2 * h)
