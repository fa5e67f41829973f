"""Reconstruction of the orientation response on the rotation grid, and the
pooling reductions over orientations.

The reconstruction is angle-separated: for every voxel it contracts the
coefficient maps over degree with the beta-dependent factor pair first, then
over m1 with the alpha trig factors, then over m2 with the gamma trig
factors, summing the two branches. Per voxel and output channel this costs
O(K^3 L) instead of the O(K^3 L^3) of a dense Wigner sum per grid point.

Pooling follows two conventions fixed here: hard maxima break ties toward
the lexicographically smallest (q, r, s) index, and the soft maximum
returns 0 whenever its denominator falls below the floor ``eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conv3d import CoefficientMaps, VoxelGrid
from .so3 import FULL_MASS, SO3Grid, grid_tables

__all__ = [
    "OrientationMap",
    "reconstruct",
    "pool_hardmax",
    "pool_softmax",
    "pool_average",
    "SOFTMAX_EPS",
]

SOFTMAX_EPS = 1e-12


@dataclass(eq=False)
class OrientationMap:
    """Orientation response sampled on an SO3Grid.

    ``values`` has shape (out, X, Y, Z, K, K, K); the trailing axes follow
    the grid's (q, r, s) = (alpha, beta, gamma) index order. ``band_limit``
    records the degree bound of the generating coefficient maps.
    """

    grid: SO3Grid
    band_limit: int
    values: np.ndarray

    @property
    def d_out(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape[1:4]


def reconstruct(
    maps: CoefficientMaps, grid: SO3Grid, block_size: int | None = None
) -> OrientationMap:
    """Angle-separated Wigner synthesis of the coefficient maps on the grid.

    ``block_size`` caps how many voxel planes along x are materialized per
    pass; the blocked and monolithic paths produce bitwise-identical output.
    """
    tab = grid_tables(maps.L, grid.K)
    dense = maps.dense_by_degree()
    X = dense.shape[4]
    out = np.empty(
        (maps.d_out,) + maps.dims + (grid.K,) * 3
    )
    step = X if block_size is None else max(1, int(block_size))
    for x0 in range(0, X, step):
        chunk = dense[:, :, :, :, x0 : x0 + step]
        a1 = np.einsum("lmnr,olmnxyz->omnrxyz", tab.D1, chunk, optimize=False)
        a2 = np.einsum("lmnr,olmnxyz->omnrxyz", tab.D2, chunk, optimize=False)
        b1 = np.einsum("mq,omnrxyz->onqrxyz", tab.Ca1, a1, optimize=False)
        b2 = np.einsum("mq,omnrxyz->onqrxyz", tab.Ca2, a2, optimize=False)
        out[:, x0 : x0 + step] = np.einsum(
            "ns,onqrxyz->oxyzqrs", tab.Cg1, b1, optimize=False
        ) + np.einsum("ns,onqrxyz->oxyzqrs", tab.Cg2, b2, optimize=False)
    return OrientationMap(grid=grid, band_limit=maps.L, values=out)


def reconstruct_adjoint(
    d_values: np.ndarray, L: int, grid: SO3Grid
) -> CoefficientMaps:
    """Adjoint of ``reconstruct``: contracts an orientation-shaped field back
    onto coefficient maps, dH[l, m1, m2] = sum_qrs D^l_{m1m2}(R_qrs) G[qrs]."""
    tab = grid_tables(L, grid.K)
    b1 = np.einsum("ns,oxyzqrs->onqrxyz", tab.Cg1, d_values, optimize=False)
    b2 = np.einsum("ns,oxyzqrs->onqrxyz", tab.Cg2, d_values, optimize=False)
    a1 = np.einsum("mq,onqrxyz->omnrxyz", tab.Ca1, b1, optimize=False)
    a2 = np.einsum("mq,onqrxyz->omnrxyz", tab.Ca2, b2, optimize=False)
    dense = np.einsum("lmnr,omnrxyz->olmnxyz", tab.D1, a1, optimize=False)
    dense += np.einsum("lmnr,omnrxyz->olmnxyz", tab.D2, a2, optimize=False)
    off = L - 1
    d_out = dense.shape[0]
    dims = dense.shape[4:]
    blocks = []
    for l in range(L):
        width = 2 * l + 1
        block = dense[:, l, off - l : off + l + 1, off - l : off + l + 1]
        blocks.append(block.reshape((d_out, width * width) + dims))
    return CoefficientMaps(L=L, values=np.concatenate(blocks, axis=1))


def _flat_orientation(m: OrientationMap) -> np.ndarray:
    shape = m.values.shape
    return m.values.reshape(shape[:4] + (shape[4] * shape[5] * shape[6],))


def pool_hardmax(m: OrientationMap) -> VoxelGrid:
    """Per-voxel maximum over all grid orientations."""
    return VoxelGrid(_flat_orientation(m).max(axis=4))


def hardmax_with_argmax(m: OrientationMap) -> tuple[VoxelGrid, np.ndarray]:
    """Hard maximum plus the flat (q, r, s) argmax index used for gradients.

    ``numpy.argmax`` returns the first maximal entry of the C-order flattened
    orientation axis, which is exactly the lexicographically smallest
    (q, r, s) under ties.
    """
    flat = _flat_orientation(m)
    idx = flat.argmax(axis=4)
    return VoxelGrid(np.take_along_axis(flat, idx[..., None], axis=4)[..., 0]), idx


def pool_softmax(m: OrientationMap, eps: float = SOFTMAX_EPS) -> VoxelGrid:
    """Weighted relu-ratio soft maximum over orientations.

    Per voxel: sum(w * relu(h)^2) / sum(w * relu(h)) with the grid's
    quadrature weights w; voxels whose denominator falls below ``eps``
    (in particular all-nonpositive slices) return 0.
    """
    out, _, _, _ = softmax_with_parts(m, eps)
    return out


def softmax_with_parts(
    m: OrientationMap, eps: float = SOFTMAX_EPS
) -> tuple[VoxelGrid, np.ndarray, np.ndarray, np.ndarray]:
    """Soft maximum plus (numerator, denominator, active mask) for gradients."""
    if eps <= 0.0:
        raise ValueError(f"denominator floor eps={eps!r} must be positive")
    w = m.grid.point_weights()[None, None, None, None]
    relu = np.maximum(m.values, 0.0)
    num = np.einsum("oxyzqrs,oxyzqrs->oxyz", w * relu, relu, optimize=False)
    den = np.einsum("oxyzqrs->oxyz", w * relu, optimize=False)
    active = den >= eps
    out = np.zeros_like(den)
    np.divide(num, den, out=out, where=active)
    return VoxelGrid(out), num, den, active


def pool_average(m: OrientationMap) -> VoxelGrid:
    """Quadrature average over orientations: integral / (8 pi^2) per voxel.

    Exact for band-limited orientation maps once the grid size reaches the
    band limit; collapses the response to its degree-0 coefficient, the same
    field a convolution with the radially averaged filter produces.
    """
    w = m.grid.point_weights()[None, None, None, None]
    return VoxelGrid(
        np.einsum("oxyzqrs->oxyz", w * m.values, optimize=False) / FULL_MASS
    )
