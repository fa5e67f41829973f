"""Scalar special functions underpinning the orientation-invariant convolution.

Provides associated Legendre polynomials, real orthonormal spherical
harmonics, Gauss-Legendre quadrature rules, and the two-term angular
factorization of real Wigner matrix elements.

Conventions fixed here and used everywhere else in the package:

* associated Legendre polynomials carry no Condon-Shortley phase,
  so ``P_1^1(x) = sqrt(1 - x^2)`` is nonnegative;
* spherical harmonics are the real orthonormal family on the unit sphere;
* all arithmetic is IEEE-754 binary64.

Every function is pure and reentrant; cached tables are immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "SphericalAngle",
    "QuadratureRule",
    "legendre_assoc",
    "real_spherical_harmonic",
    "gauss_legendre",
    "wigner_d_pair",
]

TWO_PI = 2.0 * math.pi
_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class SphericalAngle:
    """Direction on the unit sphere.

    ``polar`` is measured from the +z axis and must lie in [0, pi];
    ``azimuthal`` is wrapped into [0, 2*pi).
    """

    polar: float
    azimuthal: float

    def __post_init__(self):
        if not 0.0 <= self.polar <= math.pi:
            raise ValueError(f"polar angle {self.polar!r} outside [0, pi]")
        object.__setattr__(self, "azimuthal", float(self.azimuthal) % TWO_PI)

    @staticmethod
    def from_vector(x: float, y: float, z: float) -> "SphericalAngle":
        """Angles of a nonzero Cartesian vector."""
        r = math.sqrt(x * x + y * y + z * z)
        if r == 0.0:
            raise ValueError("direction of the zero vector is undefined")
        return SphericalAngle(math.acos(max(-1.0, min(1.0, z / r))), math.atan2(y, x))


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Gauss-Legendre rule on (-1, 1): exact for polynomials of degree <= 2K-1."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        for arr in (self.nodes, self.weights):
            arr.setflags(write=False)


def legendre_assoc(l: int, m: int, x: float) -> float:
    """Associated Legendre polynomial P_l^m(x) without Condon-Shortley phase.

    Uses the standard degree recurrence seeded by the diagonal term
    ``P_m^m = (2m-1)!! (1-x^2)^(m/2)``.
    """
    if not 0 <= m <= l:
        raise ValueError(f"order m={m} outside 0 <= m <= l={l}")
    if not -1.0 <= x <= 1.0:
        raise ValueError(f"argument x={x!r} outside [-1, 1]")
    # P_m^m, then climb in degree.
    pmm = 1.0
    if m > 0:
        s = math.sqrt((1.0 - x) * (1.0 + x))
        for k in range(1, m + 1):
            pmm *= (2 * k - 1) * s
    if l == m:
        return pmm
    pm1 = x * (2 * m + 1) * pmm
    if l == m + 1:
        return pm1
    for k in range(m + 2, l + 1):
        pmm, pm1 = pm1, (x * (2 * k - 1) * pm1 - (k + m - 1) * pmm) / (k - m)
    return pm1


@lru_cache(maxsize=None)
def _sh_norm(l: int, m: int) -> float:
    # sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!), exact integer ratio before the root
    ratio = 1.0
    for k in range(l - m + 1, l + m + 1):
        ratio /= k
    return math.sqrt((2 * l + 1) / (4.0 * math.pi) * ratio)


def real_spherical_harmonic(l: int, m: int, angle: SphericalAngle) -> float:
    """Real orthonormal spherical harmonic Y_l^m evaluated at ``angle``.

    Positive orders carry cos(m * azimuthal), negative orders sin(|m| * azimuthal),
    both with a sqrt(2) factor; the family is orthonormal on the sphere.
    """
    if abs(m) > l:
        raise ValueError(f"order m={m} outside |m| <= l={l}")
    am = abs(m)
    p = legendre_assoc(l, am, math.cos(angle.polar)) * _sh_norm(l, am)
    if m == 0:
        return p
    if m > 0:
        return _SQRT2 * p * math.cos(am * angle.azimuthal)
    return _SQRT2 * p * math.sin(am * angle.azimuthal)


def _legendre_value_deriv(K: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # P_K(x) and P_K'(x) via the three-term recurrence; valid for |x| < 1.
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(2, K + 1):
        p, p_prev = ((2 * k - 1) * x * p - (k - 1) * p_prev) / k, p
    deriv = K * (x * p - p_prev) / (x * x - 1.0)
    return p, deriv


@lru_cache(maxsize=None)
def gauss_legendre(K: int) -> QuadratureRule:
    """K-point Gauss-Legendre rule: Newton iteration on P_K from asymptotic guesses.

    Convergence threshold 1e-15 on the node update, capped at 100 iterations.
    Nodes are returned in ascending order; the (anti)symmetry of the node set
    about 0 is enforced exactly.
    """
    if K < 1:
        raise ValueError(f"quadrature order K={K} must be >= 1")
    i = np.arange(1, K + 1, dtype=float)
    x = np.cos(math.pi * (i - 0.25) / (K + 0.5))
    for _ in range(100):
        p, dp = _legendre_value_deriv(K, x)
        dx = p / dp
        x -= dx
        if np.max(np.abs(dx)) <= 1e-15:
            break
    else:
        raise RuntimeError(f"Gauss-Legendre root finding did not converge for K={K}")
    x = 0.5 * (x - x[::-1])  # exact antisymmetry; midpoint of odd K becomes 0
    _, dp = _legendre_value_deriv(K, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    return QuadratureRule(order=K, nodes=x[order], weights=w[order])


@lru_cache(maxsize=None)
def _sqrt_fact_product(l: int, m1: int, m2: int) -> float:
    a = (
        math.factorial(l + m1)
        * math.factorial(l - m1)
        * math.factorial(l + m2)
        * math.factorial(l - m2)
    )
    return math.sqrt(float(a))


@lru_cache(maxsize=None)
def _small_d_matrix_cached(l: int, beta: float) -> np.ndarray:
    """Wigner small-d matrix d^l(beta) in the complex basis, via the factorial sum.

    Entry [m1 + l, m2 + l] holds d^l_{m1 m2}(beta). Adequate up to l ~ 16,
    far beyond the band limits this package supports.
    """
    n = 2 * l + 1
    c = math.cos(0.5 * beta)
    s = math.sin(0.5 * beta)
    d = np.empty((n, n))
    for m1 in range(-l, l + 1):
        for m2 in range(-l, l + 1):
            pref = _sqrt_fact_product(l, m1, m2)
            total = 0.0
            for k in range(max(0, m2 - m1), min(l + m2, l - m1) + 1):
                denom = (
                    math.factorial(l + m2 - k)
                    * math.factorial(k)
                    * math.factorial(m1 - m2 + k)
                    * math.factorial(l - m1 - k)
                )
                term = (c ** (2 * l + m2 - m1 - 2 * k)) * (s ** (m1 - m2 + 2 * k)) / denom
                if (m1 - m2 + k) % 2:
                    term = -term
                total += term
            d[m1 + l, m2 + l] = pref * total
    d.setflags(write=False)
    return d


def _real_complex_basis_entry(mu: int, m: int) -> complex:
    # Coefficient of complex harmonic m in the real harmonic mu (same |m|).
    if mu == 0:
        return 1.0 + 0.0j
    sign = -1.0 if abs(mu) % 2 else 1.0  # (-1)^|mu|
    if mu > 0:
        re = sign / _SQRT2 if m == mu else 1.0 / _SQRT2
        return complex(re, 0.0)
    im = -sign / _SQRT2 if m == -mu else 1.0 / _SQRT2
    return complex(0.0, im)


def _pair_from_small_d(l: int, m1: int, m2: int, d: np.ndarray) -> tuple[float, float]:
    """Angular factor pair (d1, d2) for the real matrix element (m1, m2).

    The real element factorizes as
        D^l_{m1 m2}(a, b, g) = C_{m1}(m1 a) d1(b) C_{m2}(m2 g)
                             + C_{-m1}(m1 a) d2(b) C_{-m2}(m2 g)
    with C_m = cos for m >= 0 and sin for m < 0. The pair is read off from
    the complex matrix conjugated into the real harmonic basis.
    """
    am1, am2 = abs(m1), abs(m2)
    t_cc = t_cs = t_sc = t_ss = 0.0
    for s1 in ((1,) if am1 == 0 else (1, -1)):
        u1 = _real_complex_basis_entry(m1, s1 * am1)
        for s2 in ((1,) if am2 == 0 else (1, -1)):
            u2 = _real_complex_basis_entry(m2, s2 * am2)
            z = u1 * u2.conjugate() * d[s1 * am1 + l, s2 * am2 + l]
            t_cc += z.real
            t_ss += -s1 * s2 * z.real
            t_sc += -s1 * z.imag
            t_cs += -s2 * z.imag
    if m1 > 0:
        if m2 > 0:
            return t_cc, t_ss
        if m2 == 0:
            return t_cc, t_sc
        return -t_cs, t_sc
    if m1 == 0:
        if m2 > 0:
            return t_cc, t_cs
        if m2 == 0:
            return t_cc, 0.0
        return -t_cs, t_cc
    if m2 > 0:
        return -t_sc, t_cs
    if m2 == 0:
        return -t_sc, t_cc
    return t_ss, t_cc


def wigner_d_pair(l: int, m1: int, m2: int, beta: float) -> tuple[float, float]:
    """Two-term angular factorization of the real Wigner matrix element.

    Returns (d1, d2) such that the real matrix element at Euler angles
    (alpha, beta, gamma) equals
        C_{m1}(m1 alpha) * d1 * C_{m2}(m2 gamma)
      + C_{-m1}(m1 alpha) * d2 * C_{-m2}(m2 gamma)
    with C_m(x) = cos(x) for m >= 0 and sin(x) for m < 0.
    """
    if abs(m1) > l or abs(m2) > l:
        raise ValueError(f"orders ({m1}, {m2}) outside |m| <= l={l}")
    if not 0.0 <= beta <= math.pi:
        raise ValueError(f"beta={beta!r} outside [0, pi]")
    return _pair_from_small_d(l, m1, m2, _small_d_matrix_cached(l, float(beta)))
