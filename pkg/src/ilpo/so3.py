"""Rotation-group machinery: sampling grids, real Wigner matrices, exact
band-limited integration over SO(3), and rotation of expansion coefficients.

Rotations are parameterized by ZYZ Euler angles: R = Rz(alpha) Ry(beta) Rz(gamma).
The real Wigner matrices used here represent rotations in the real
spherical-harmonic basis,

    Y_l^m1(R w) = sum_m2 D^l_{m1 m2}(R) Y_l^m2(w)   for every direction w,

and form an orthogonal family on SO(3) with weight 8 pi^2 / (2l + 1).

The sampling grid is regular in alpha and gamma and Gauss-Legendre in
cos(beta), which integrates products of band-limited functions exactly
once the linear grid size reaches the band limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .special_functions import gauss_legendre, _pair_from_small_d, _small_d_matrix_cached

__all__ = [
    "EulerZYZ",
    "SO3Grid",
    "WignerCoefficients",
    "SO3Function",
    "make_so3_grid",
    "euler_to_matrix",
    "matrix_to_euler",
    "wigner_D_real",
    "wigner_D_matrix",
    "integrate_so3",
    "decompose_so3",
    "synthesize_so3",
    "rotate_so3_function",
]

TWO_PI = 2.0 * math.pi
FULL_MASS = 8.0 * math.pi**2  # Haar volume of SO(3) in Euler coordinates


@dataclass(frozen=True)
class EulerZYZ:
    """ZYZ Euler triple: alpha, gamma wrapped into [0, 2*pi), beta in [0, pi]."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        beta = float(self.beta)
        # absorb roundoff from arccos at the poles
        if -1e-12 <= beta < 0.0:
            beta = 0.0
        elif math.pi < beta <= math.pi + 1e-12:
            beta = math.pi
        if not 0.0 <= beta <= math.pi:
            raise ValueError(f"beta={self.beta!r} outside [0, pi]")
        object.__setattr__(self, "alpha", float(self.alpha) % TWO_PI)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", float(self.gamma) % TWO_PI)


def _cossin(m: int, x: float) -> float:
    # C_m(x): cosine branch for m >= 0, sine branch for m < 0
    return math.cos(x) if m >= 0 else math.sin(x)


@dataclass(frozen=True, eq=False)
class SO3Grid:
    """K^3 Euler-angle sample set with Gauss-Legendre beta quadrature.

    alphas and gammas are the K regular samples 2*pi*q/K; betas are the
    arccos of the K Gauss-Legendre nodes, listed in ascending beta. Sample
    (q, r, s) carries quadrature weight (2*pi/K)^2 * beta_weights[r], and the
    weights of all K^3 samples sum to 8*pi^2.
    """

    K: int
    alphas: np.ndarray
    betas: np.ndarray
    gammas: np.ndarray
    beta_weights: np.ndarray

    def __post_init__(self):
        for arr in (self.alphas, self.betas, self.gammas, self.beta_weights):
            arr.setflags(write=False)

    @property
    def n_points(self) -> int:
        return self.K**3

    def euler_at(self, q: int, r: int, s: int) -> EulerZYZ:
        return EulerZYZ(self.alphas[q], self.betas[r], self.gammas[s])

    def point_weights(self) -> np.ndarray:
        """Quadrature weight of every sample, shape (K, K, K) in (q, r, s) order."""
        w = np.zeros((self.K, self.K, self.K))
        w += (TWO_PI / self.K) ** 2 * self.beta_weights[None, :, None]
        return w


@lru_cache(maxsize=None)
def make_so3_grid(K: int) -> SO3Grid:
    """Deterministic K^3 sampling grid of SO(3)."""
    if K < 1:
        raise ValueError(f"grid size K={K} must be >= 1")
    rule = gauss_legendre(K)
    angles = TWO_PI * np.arange(K) / K
    # ascending beta = arccos of descending nodes
    return SO3Grid(
        K=K,
        alphas=angles.copy(),
        betas=np.arccos(rule.nodes[::-1]).copy(),
        gammas=angles.copy(),
        beta_weights=rule.weights[::-1].copy(),
    )


def euler_to_matrix(e: EulerZYZ) -> np.ndarray:
    """3x3 rotation matrix Rz(alpha) @ Ry(beta) @ Rz(gamma)."""
    ca, sa = math.cos(e.alpha), math.sin(e.alpha)
    cb, sb = math.cos(e.beta), math.sin(e.beta)
    cg, sg = math.cos(e.gamma), math.sin(e.gamma)
    return np.array(
        [
            [ca * cb * cg - sa * sg, -ca * cb * sg - sa * cg, ca * sb],
            [sa * cb * cg + ca * sg, -sa * cb * sg + ca * cg, sa * sb],
            [-sb * cg, sb * sg, cb],
        ]
    )


def matrix_to_euler(rot: np.ndarray) -> EulerZYZ:
    """ZYZ Euler angles of a rotation matrix (inverse of euler_to_matrix).

    At the gimbal-degenerate poles (beta = 0 or pi) gamma is fixed to 0.
    """
    rot = np.asarray(rot, dtype=float)
    cb = max(-1.0, min(1.0, rot[2, 2]))
    beta = math.acos(cb)
    if min(beta, math.pi - beta) < 1e-9:
        if cb > 0.0:
            return EulerZYZ(math.atan2(rot[1, 0], rot[0, 0]), 0.0, 0.0)
        return EulerZYZ(-math.atan2(rot[1, 0], -rot[0, 0]), math.pi, 0.0)
    return EulerZYZ(
        math.atan2(rot[1, 2], rot[0, 2]),
        beta,
        math.atan2(rot[2, 1], -rot[2, 0]),
    )


def wigner_D_real(l: int, m1: int, m2: int, e: EulerZYZ) -> float:
    """Real Wigner matrix element D^l_{m1 m2} at Euler angles ``e``."""
    d = _small_d_matrix_cached(l, e.beta)
    d1, d2 = _pair_from_small_d(l, m1, m2, d)
    return _cossin(m1, m1 * e.alpha) * d1 * _cossin(m2, m2 * e.gamma) + _cossin(
        -m1, m1 * e.alpha
    ) * d2 * _cossin(-m2, m2 * e.gamma)


def wigner_D_matrix(l: int, e: EulerZYZ) -> np.ndarray:
    """Full (2l+1) x (2l+1) real Wigner matrix at Euler angles ``e``."""
    d = _small_d_matrix_cached(l, e.beta)
    out = np.empty((2 * l + 1, 2 * l + 1))
    for m1 in range(-l, l + 1):
        c1 = _cossin(m1, m1 * e.alpha)
        s1 = _cossin(-m1, m1 * e.alpha)
        for m2 in range(-l, l + 1):
            d1, d2 = _pair_from_small_d(l, m1, m2, d)
            out[m1 + l, m2 + l] = c1 * d1 * _cossin(m2, m2 * e.gamma) + s1 * d2 * _cossin(
                -m2, m2 * e.gamma
            )
    return out


class WignerCoefficients:
    """Expansion coefficients of a band-limited function on SO(3).

    Block ``l`` is the (2l+1) x (2l+1) real matrix of coefficients of degree
    l < L. ``approximate`` flags coefficients recovered from a grid that is
    too coarse to integrate the band limit exactly.
    """

    def __init__(self, blocks, approximate: bool = False):
        self.blocks = []
        for l, block in enumerate(blocks):
            block = np.array(block, dtype=float)
            if block.shape != (2 * l + 1, 2 * l + 1):
                raise ValueError(
                    f"degree-{l} block has shape {block.shape}, expected {(2 * l + 1,) * 2}"
                )
            self.blocks.append(block)
        self.L = len(self.blocks)
        self.approximate = approximate

    @classmethod
    def zeros(cls, L: int) -> "WignerCoefficients":
        return cls([np.zeros((2 * l + 1, 2 * l + 1)) for l in range(L)])

    @property
    def total_count(self) -> int:
        """Number of scalar coefficients: L(2L-1)(2L+1)/3."""
        return sum((2 * l + 1) ** 2 for l in range(self.L))

    def copy(self) -> "WignerCoefficients":
        return WignerCoefficients([b.copy() for b in self.blocks], self.approximate)

    def scaled(self, factor: float) -> "WignerCoefficients":
        return WignerCoefficients([factor * b for b in self.blocks], self.approximate)

    def weighted_norm(self) -> float:
        """2-norm of the synthesized function (orthogonality weights 8 pi^2/(2l+1))."""
        total = 0.0
        for l, block in enumerate(self.blocks):
            total += FULL_MASS / (2 * l + 1) * float(np.sum(block * block))
        return math.sqrt(total)

    def max_abs_difference(self, other: "WignerCoefficients") -> float:
        if self.L != other.L:
            raise ValueError(f"band limits differ: {self.L} vs {other.L}")
        return max(
            float(np.max(np.abs(a - b))) for a, b in zip(self.blocks, other.blocks)
        )


# ---------------------------------------------------------------------------
# factored evaluation tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridTables:
    """Per-(L, K) tables for angle-separated Wigner sums on an SO3Grid.

    D1/D2 hold the beta factors, shape (L, 2L-1, 2L-1, K), zero-padded
    outside |m| <= l. Ca1[m+L-1, q] = C_m(m alpha_q), Ca2[m+L-1, q] =
    C_{-m}(m alpha_q); Cg1/Cg2 likewise over gamma.
    """

    L: int
    K: int
    D1: np.ndarray
    D2: np.ndarray
    Ca1: np.ndarray
    Ca2: np.ndarray
    Cg1: np.ndarray
    Cg2: np.ndarray

    def __post_init__(self):
        for arr in (self.D1, self.D2, self.Ca1, self.Ca2, self.Cg1, self.Cg2):
            arr.setflags(write=False)


@lru_cache(maxsize=None)
def grid_tables(L: int, K: int) -> GridTables:
    """Build (and cache) the factored evaluation tables for band limit L on grid K."""
    grid = make_so3_grid(K)
    M = 2 * L - 1
    off = L - 1
    D1 = np.zeros((L, M, M, K))
    D2 = np.zeros((L, M, M, K))
    for r, beta in enumerate(grid.betas):
        for l in range(L):
            d = _small_d_matrix_cached(l, float(beta))
            for m1 in range(-l, l + 1):
                for m2 in range(-l, l + 1):
                    d1, d2 = _pair_from_small_d(l, m1, m2, d)
                    D1[l, m1 + off, m2 + off, r] = d1
                    D2[l, m1 + off, m2 + off, r] = d2
    ms = np.arange(-off, off + 1)
    Ca1 = np.empty((M, K))
    Ca2 = np.empty((M, K))
    Cg1 = np.empty((M, K))
    Cg2 = np.empty((M, K))
    for i, m in enumerate(ms):
        Ca1[i] = np.cos(m * grid.alphas) if m >= 0 else np.sin(m * grid.alphas)
        Ca2[i] = np.cos(m * grid.alphas) if -m >= 0 else np.sin(m * grid.alphas)
        Cg1[i] = np.cos(m * grid.gammas) if m >= 0 else np.sin(m * grid.gammas)
        Cg2[i] = np.cos(m * grid.gammas) if -m >= 0 else np.sin(m * grid.gammas)
    return GridTables(L=L, K=K, D1=D1, D2=D2, Ca1=Ca1, Ca2=Ca2, Cg1=Cg1, Cg2=Cg2)


def _blocks_to_dense(c: WignerCoefficients) -> np.ndarray:
    """Pad per-degree blocks into an (L, 2L-1, 2L-1) array, zeros outside |m| <= l."""
    L = c.L
    off = L - 1
    dense = np.zeros((L, 2 * L - 1, 2 * L - 1))
    for l, block in enumerate(c.blocks):
        dense[l, off - l : off + l + 1, off - l : off + l + 1] = block
    return dense


def _dense_to_blocks(dense: np.ndarray, approximate: bool = False) -> WignerCoefficients:
    L = dense.shape[0]
    off = L - 1
    blocks = [dense[l, off - l : off + l + 1, off - l : off + l + 1] for l in range(L)]
    return WignerCoefficients(blocks, approximate=approximate)


def _synthesize_on_grid(dense: np.ndarray, tab: GridTables) -> np.ndarray:
    """Evaluate the Wigner sum of dense (L, M, M) coefficients at all K^3 grid points.

    Contracts degree first, then the alpha factors, then the gamma factors,
    summing the two angular branches. Returns shape (K, K, K) in (q, r, s) order.
    """
    a1 = np.einsum("lmnr,lmn->mnr", tab.D1, dense, optimize=False)
    a2 = np.einsum("lmnr,lmn->mnr", tab.D2, dense, optimize=False)
    b1 = np.einsum("mq,mnr->nqr", tab.Ca1, a1, optimize=False)
    b2 = np.einsum("mq,mnr->nqr", tab.Ca2, a2, optimize=False)
    return np.einsum("ns,nqr->qrs", tab.Cg1, b1, optimize=False) + np.einsum(
        "ns,nqr->qrs", tab.Cg2, b2, optimize=False
    )


def _grid_adjoint(values: np.ndarray, tab: GridTables) -> np.ndarray:
    """Adjoint of _synthesize_on_grid: dense[l,m1,m2] = sum_qrs D^l_{m1m2}(R_qrs) v[qrs]."""
    b1 = np.einsum("ns,qrs->nqr", tab.Cg1, values, optimize=False)
    b2 = np.einsum("ns,qrs->nqr", tab.Cg2, values, optimize=False)
    a1 = np.einsum("mq,nqr->mnr", tab.Ca1, b1, optimize=False)
    a2 = np.einsum("mq,nqr->mnr", tab.Ca2, b2, optimize=False)
    return np.einsum("lmnr,mnr->lmn", tab.D1, a1, optimize=False) + np.einsum(
        "lmnr,mnr->lmn", tab.D2, a2, optimize=False
    )


# ---------------------------------------------------------------------------
# integration, analysis, synthesis
# ---------------------------------------------------------------------------


def integrate_so3(grid: SO3Grid, values: np.ndarray) -> float:
    """Quadrature sum over the grid: sum_qrs (2 pi / K)^2 w_r values[q, r, s]."""
    values = np.asarray(values, dtype=float)
    expected = (grid.K, grid.K, grid.K)
    if values.size != grid.n_points:
        raise ValueError(f"got {values.size} values for a grid of {grid.n_points} points")
    values = values.reshape(expected)
    return float(
        (TWO_PI / grid.K) ** 2
        * np.einsum("qrs,r->", values, grid.beta_weights, optimize=False)
    )


def decompose_so3(grid: SO3Grid, values: np.ndarray, L: int) -> WignerCoefficients:
    """Project grid samples onto Wigner matrices up to band limit L.

    Coefficients are (2l+1)/(8 pi^2) times the quadrature integral of the
    samples against each matrix element. The projection recovers the
    coefficients of band-limited samples exactly once K >= 2L-1; below that
    the regular alpha/gamma axes alias frequency pairs summing to K (and a
    K^3 grid holds fewer samples than there are coefficients when K = L),
    so the result is marked approximate. Coarse grids are accepted without
    error because the pooling pipeline legitimately uses them.
    """
    if L < 1:
        raise ValueError(f"band limit L={L} must be >= 1")
    values = np.asarray(values, dtype=float)
    if values.size != grid.n_points:
        raise ValueError(f"got {values.size} values for a grid of {grid.n_points} points")
    values = values.reshape((grid.K,) * 3)
    tab = grid_tables(L, grid.K)
    dense = _grid_adjoint(values * grid.point_weights(), tab)
    for l in range(L):
        dense[l] *= (2 * l + 1) / FULL_MASS
    return _dense_to_blocks(dense, approximate=grid.K < 2 * L - 1)


def synthesize_so3(c: WignerCoefficients, e: EulerZYZ) -> float:
    """Finite Wigner sum of the coefficients at one rotation."""
    total = 0.0
    for l, block in enumerate(c.blocks):
        total += float(np.sum(block * wigner_D_matrix(l, e)))
    return total


def rotate_so3_function(c: WignerCoefficients, e: EulerZYZ) -> WignerCoefficients:
    """Coefficients of the rotated function f'(R) = f(R R_e).

    Implemented as per-degree right multiplication by the Wigner matrix of
    ``e`` (transposed), which preserves the weighted 2-norm.
    """
    blocks = []
    for l, block in enumerate(c.blocks):
        blocks.append(
            np.einsum("mk,nk->mn", block, wigner_D_matrix(l, e), optimize=False)
        )
    return WignerCoefficients(blocks, approximate=c.approximate)


class SO3Function:
    """Band-limited function on SO(3) held by its Wigner coefficients.

    With ``cache_grid_tables`` (the default) grid evaluations go through the
    cached angle-separated tables; pointwise evaluation is always the exact
    finite Wigner sum.
    """

    def __init__(self, coefficients: WignerCoefficients, cache_grid_tables: bool = True):
        self.coefficients = coefficients
        self.cache_grid_tables = cache_grid_tables

    @property
    def L(self) -> int:
        return self.coefficients.L

    def evaluate(self, e: EulerZYZ) -> float:
        return synthesize_so3(self.coefficients, e)

    def sample_on_grid(self, grid: SO3Grid) -> np.ndarray:
        """Values at all K^3 grid rotations, shape (K, K, K) in (q, r, s) order."""
        if not self.cache_grid_tables:
            out = np.empty((grid.K,) * 3)
            for q in range(grid.K):
                for r in range(grid.K):
                    for s in range(grid.K):
                        out[q, r, s] = self.evaluate(grid.euler_at(q, r, s))
            return out
        tab = grid_tables(self.L, grid.K)
        return _synthesize_on_grid(_blocks_to_dense(self.coefficients), tab)

    def rotated(self, e: EulerZYZ) -> "SO3Function":
        return SO3Function(rotate_so3_function(self.coefficients, e), self.cache_grid_tables)
