"""End-to-end orientation-invariant convolution layer with analytic gradients.

Forward: expand the filter coefficients, convolve once per expansion kernel,
reconstruct the orientation response on the rotation grid, pool over
orientations, add the optional bias. Backward runs the exact adjoints of the
linear stages; hard-max pooling routes the incoming gradient to the recorded
argmax orientation, soft-max pooling differentiates the weighted relu ratio
through the masks captured in the forward pass.

Gradient conventions at nonsmooth points: relu contributes zero slope at
exactly zero, and tied hard maxima follow the lexicographically smallest
grid index. ``gradcheck`` certifies the analytic gradients against central
finite differences away from those kinks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conv3d import CoefficientMaps, VoxelGrid, _input_windows, coefficient_convolution
from .filter import (
    ExpandedFilter,
    FilterCoefficients,
    coefficient_count,
    expand_filter,
    filter_geometry,
    random_filter,
    structural_mask,
)
from .orientation import (
    OrientationMap,
    SOFTMAX_EPS,
    hardmax_with_argmax,
    reconstruct,
    reconstruct_adjoint,
    softmax_with_parts,
)
from .so3 import SO3Grid, grid_tables, make_so3_grid

__all__ = [
    "IlpoLayerConfig",
    "IlpoTape",
    "LayerGradients",
    "ilpo_forward",
    "ilpo_backward",
    "gradcheck",
    "conv_adjoint_input",
    "conv_adjoint_filter",
    "expand_adjoint",
]

DEFAULT_K = {"softmax": 4, "hardmax": 7}


@dataclass
class IlpoLayerConfig:
    """Layer configuration.

    ``K`` defaults to 4 for softmax pooling and 7 for hardmax pooling; the
    coarser softmax grid reaches a comparable orientation-sampling error.
    """

    L: int
    pooling: str = "softmax"
    K: int | None = None
    padding: str = "same"
    bias: np.ndarray | None = None
    eps: float = SOFTMAX_EPS
    block_size: int | None = None

    def __post_init__(self):
        if self.pooling not in ("softmax", "hardmax"):
            raise ValueError(f"pooling must be 'softmax' or 'hardmax', got {self.pooling!r}")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        if self.L < 1 or self.L % 2 == 0:
            raise ValueError(f"filter size L={self.L} must be odd and >= 1")
        if self.K is None:
            self.K = DEFAULT_K[self.pooling]
        if self.K < 1:
            raise ValueError(f"rotation grid size K={self.K} must be >= 1")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=float)


@dataclass(eq=False)
class IlpoTape:
    """Forward record consumed by exactly one backward call.

    Stores the expanded kernels, coefficient maps, and the pooling masks and
    partial sums; the orientation response itself is recomputed blockwise in
    backward rather than kept.
    """

    cfg: IlpoLayerConfig
    grid: SO3Grid
    input_values: np.ndarray
    expanded: ExpandedFilter
    maps: CoefficientMaps
    argmax: np.ndarray | None = None
    softmax_num: np.ndarray | None = None
    softmax_den: np.ndarray | None = None
    softmax_active: np.ndarray | None = None
    output_dims: tuple | None = None
    consumed: bool = False


@dataclass(eq=False)
class LayerGradients:
    """Reverse-mode derivatives of the layer output.

    ``d_coefficients`` matches FilterCoefficients.values (structurally
    masked); ``d_input`` matches the input voxel array; ``d_bias`` is
    per-output-channel and None when the layer has no bias.
    """

    d_coefficients: np.ndarray
    d_input: np.ndarray
    d_bias: np.ndarray | None


def ilpo_forward(
    input_grid: VoxelGrid, c: FilterCoefficients, cfg: IlpoLayerConfig
) -> tuple[VoxelGrid, IlpoTape]:
    """Run the four-stage layer; returns the pooled output and the tape."""
    if cfg.L != c.L:
        raise ValueError(f"config filter size {cfg.L} != coefficient filter size {c.L}")
    if cfg.bias is not None and cfg.bias.shape != (c.d_out,):
        raise ValueError(
            f"bias shape {cfg.bias.shape} incompatible with {c.d_out} output channels"
        )
    grid = make_so3_grid(cfg.K)
    expanded = expand_filter(c)
    maps = coefficient_convolution(input_grid, expanded, cfg.padding)
    omap = reconstruct(maps, grid, cfg.block_size)
    tape = IlpoTape(
        cfg=cfg,
        grid=grid,
        input_values=input_grid.values,
        expanded=expanded,
        maps=maps,
        output_dims=maps.dims,
    )
    if cfg.pooling == "hardmax":
        out, tape.argmax = hardmax_with_argmax(omap)
    else:
        out, tape.softmax_num, tape.softmax_den, tape.softmax_active = softmax_with_parts(
            omap, cfg.eps
        )
    if cfg.bias is not None:
        out.values += cfg.bias[:, None, None, None]
    return out, tape


def ilpo_backward(tape: IlpoTape, d_output: VoxelGrid) -> LayerGradients:
    """Exact reverse-mode derivatives of the forward map recorded in ``tape``."""
    if tape.consumed:
        raise ValueError("tape already consumed by a previous backward call")
    cfg = tape.cfg
    expected = (tape.maps.d_out,) + tape.output_dims
    if d_output.values.shape != expected:
        raise ValueError(
            f"d_output shape {d_output.values.shape} does not match forward "
            f"output shape {expected}"
        )
    tape.consumed = True
    dout = d_output.values
    if cfg.pooling == "hardmax":
        d_maps = _hardmax_pullback(tape, dout)
    else:
        d_maps = _softmax_pullback(tape, dout)
    d_input = conv_adjoint_input(
        d_maps, tape.expanded, cfg.padding, tape.input_values.shape
    )
    d_kernels = conv_adjoint_filter(tape.input_values, d_maps, cfg.L, cfg.padding)
    d_coeff = expand_adjoint(d_kernels, cfg.L)
    d_bias = None
    if cfg.bias is not None:
        d_bias = np.einsum("oxyz->o", dout, optimize=False)
    return LayerGradients(d_coefficients=d_coeff, d_input=d_input, d_bias=d_bias)


def _hardmax_pullback(tape: IlpoTape, dout: np.ndarray) -> CoefficientMaps:
    # route the gradient to the argmax orientation of every voxel
    tab = grid_tables(tape.maps.L, tape.grid.K)
    off = tape.maps.L - 1
    K = tape.grid.K
    # dense Wigner table on the grid, flat over (q, r, s)
    d_dense = np.einsum("mq,lmnr,ns->lmnqrs", tab.Ca1, tab.D1, tab.Cg1, optimize=False)
    d_dense += np.einsum("mq,lmnr,ns->lmnqrs", tab.Ca2, tab.D2, tab.Cg2, optimize=False)
    d_flat = d_dense.reshape(d_dense.shape[:3] + (K**3,))
    gathered = d_flat[:, :, :, tape.argmax]  # (L, M, M, O, X, Y, Z)
    dense = np.einsum("lmnoxyz,oxyz->olmnxyz", gathered, dout, optimize=False)
    blocks = []
    d_out = dout.shape[0]
    for l in range(tape.maps.L):
        width = 2 * l + 1
        block = dense[:, l, off - l : off + l + 1, off - l : off + l + 1]
        blocks.append(block.reshape((d_out, width * width) + tape.output_dims))
    return CoefficientMaps(L=tape.maps.L, values=np.concatenate(blocks, axis=1))


def _softmax_pullback(tape: IlpoTape, dout: np.ndarray) -> CoefficientMaps:
    # d/dW of num/den through the relu masks; recompute W blockwise-identically
    omap = reconstruct(tape.maps, tape.grid, tape.cfg.block_size)
    w = tape.grid.point_weights()[None, None, None, None]
    relu = np.maximum(omap.values, 0.0)
    on = omap.values > 0.0
    num = tape.softmax_num[..., None, None, None]
    den = tape.softmax_den[..., None, None, None]
    active = tape.softmax_active[..., None, None, None]
    d_w = np.zeros_like(omap.values)
    np.divide(2.0 * relu * den - num, den * den, out=d_w, where=active & on)
    d_w *= w
    d_w *= dout[..., None, None, None]
    return reconstruct_adjoint(d_w, tape.maps.L, tape.grid)


# ---------------------------------------------------------------------------
# adjoints of the linear stages
# ---------------------------------------------------------------------------


def conv_adjoint_filter(
    input_values: np.ndarray, d_maps: CoefficientMaps, L: int, padding: str
) -> np.ndarray:
    """Gradient of the coefficient convolution with respect to the kernels.

    Returns (out, in, n_coef, L, L, L), the correlation of the input windows
    with the incoming map gradients.
    """
    windows = _input_windows(input_values, L, padding)
    return np.einsum("osxyz,cxyzijk->oscijk", d_maps.values, windows, optimize=False)


def conv_adjoint_input(
    d_maps: CoefficientMaps, filt: ExpandedFilter, padding: str, input_shape: tuple
) -> np.ndarray:
    """Gradient of the coefficient convolution with respect to the input.

    Scatter-adds kernel-weighted map gradients back onto the input lattice;
    the 27-way (for L=3) slice accumulation runs in a fixed offset order.
    """
    L = filt.L
    half = L // 2
    spread = np.einsum(
        "osxyz,oscijk->cxyzijk", d_maps.values, filt.kernels, optimize=False
    )
    c, x, y, z = input_shape
    if padding == "same":
        buf = np.zeros((c, x + 2 * half, y + 2 * half, z + 2 * half))
    else:
        buf = np.zeros((c, x, y, z))
    xo, yo, zo = spread.shape[1:4]
    for i in range(L):
        for j in range(L):
            for k in range(L):
                buf[:, i : i + xo, j : j + yo, k : k + zo] += spread[..., i, j, k]
    if padding == "same":
        return buf[:, half : half + x, half : half + y, half : half + z]
    return buf


def expand_adjoint(d_kernels: np.ndarray, L: int) -> np.ndarray:
    """Gradient of the filter expansion with respect to the coefficients.

    Contracts kernel gradients against the harmonic voxel tables and sums
    voxels shell-wise; structural zeros stay zero.
    """
    geo = filter_geometry(L)
    onehot = np.zeros((geo.n_shells, L, L, L))
    for s in range(geo.n_shells):
        onehot[s] = geo.shell_index == s
    d_out, d_in = d_kernels.shape[:2]
    grad = np.zeros((d_out, d_in, L, 2 * L - 1, geo.n_shells))
    pos = 0
    for l in range(L):
        width = 2 * l + 1
        block = d_kernels[:, :, pos : pos + width * width].reshape(
            (d_out, d_in, width, width, L, L, L)
        )
        per_voxel = np.einsum("oimnxyz,nxyz->oimxyz", block, geo.harmonics[l], optimize=False)
        grad[:, :, l, L - 1 - l : L + l] = np.einsum(
            "oimxyz,sxyz->oims", per_voxel, onehot, optimize=False
        )
        pos += width * width
    grad *= structural_mask(L)
    return grad


# ---------------------------------------------------------------------------
# finite-difference certification
# ---------------------------------------------------------------------------


def _linear_probe_forward(
    input_grid: VoxelGrid, c: FilterCoefficients, cfg: IlpoLayerConfig, phi: np.ndarray
) -> tuple[VoxelGrid, CoefficientMaps, SO3Grid]:
    # pooling replaced by a fixed linear functional over orientations
    grid = make_so3_grid(cfg.K)
    expanded = expand_filter(c)
    maps = coefficient_convolution(input_grid, expanded, cfg.padding)
    omap = reconstruct(maps, grid, cfg.block_size)
    out = np.einsum("oxyzqrs,qrs->oxyz", omap.values, phi, optimize=False)
    return VoxelGrid(out), maps, grid


def _linear_probe_gradients(
    input_grid: VoxelGrid,
    c: FilterCoefficients,
    cfg: IlpoLayerConfig,
    phi: np.ndarray,
    dout: np.ndarray,
) -> LayerGradients:
    grid = make_so3_grid(cfg.K)
    expanded = expand_filter(c)
    d_w = dout[..., None, None, None] * phi[None, None, None, None]
    d_maps = reconstruct_adjoint(d_w, cfg.L, grid)
    d_input = conv_adjoint_input(d_maps, expanded, cfg.padding, input_grid.values.shape)
    d_kernels = conv_adjoint_filter(input_grid.values, d_maps, cfg.L, cfg.padding)
    return LayerGradients(
        d_coefficients=expand_adjoint(d_kernels, cfg.L), d_input=d_input, d_bias=None
    )


def _margin_ok(omap_values: np.ndarray, pooling: str, margin: float) -> bool:
    if pooling == "softmax":
        return bool(np.min(np.abs(omap_values)) > margin)
    flat = omap_values.reshape(omap_values.shape[:4] + (-1,))
    top2 = np.partition(flat, flat.shape[-1] - 2, axis=-1)[..., -2:]
    return bool(np.min(top2[..., 1] - top2[..., 0]) > margin)


def gradcheck(
    seed: int,
    cfg: IlpoLayerConfig,
    mode: str = "pooled",
    n_coeff_samples: int = 40,
    n_input_samples: int = 20,
    fd_step: float = 1e-5,
    margin: float = 1e-3,
    size: int = 5,
    channels: tuple[int, int] = (1, 1),
) -> dict:
    """Compare analytic gradients against central finite differences.

    Draws a small random instance (resampling deterministically until the
    orientation response clears the relu-kink / argmax-tie ``margin`` when
    pooling is active), samples coefficient and input coordinates, and
    reports the max relative error with denominator max(|a|, |n|, 1e-8).

    ``mode`` is "pooled" (the configured pooling) or "linear" (pooling
    replaced by a fixed random functional over orientations, exercising only
    the linear stages).
    """
    if mode not in ("pooled", "linear"):
        raise ValueError(f"mode must be 'pooled' or 'linear', got {mode!r}")
    if size > 7 or max(channels) > 2:
        raise ValueError("gradcheck instances are capped at 7^3 voxels and 2 channels")
    d_in, d_out = channels
    attempts = 0
    rng = None
    for attempt in range(200):
        attempts += 1
        inst_seed = seed + 1000 * attempt
        rng = np.random.default_rng(inst_seed)
        c = random_filter(inst_seed + 1, cfg.L, d_in, d_out, scale=1.0)
        input_grid = VoxelGrid(rng.standard_normal((d_in, size, size, size)))
        if mode == "linear":
            break
        grid = make_so3_grid(cfg.K)
        omap = reconstruct(
            coefficient_convolution(input_grid, expand_filter(c), cfg.padding), grid
        )
        if _margin_ok(omap.values, cfg.pooling, margin):
            break
    else:
        raise RuntimeError("no margin-clean instance found in 200 attempts")

    phi = rng.standard_normal((cfg.K,) * 3)
    u = rng.standard_normal((d_out,) + _forward_dims(input_grid, cfg))

    def loss_and_grads(coeff_values, input_values, want_grads):
        cc = FilterCoefficients(c.geometry, coeff_values)
        vg = VoxelGrid(input_values)
        if mode == "linear":
            out, _, _ = _linear_probe_forward(vg, cc, cfg, phi)
            loss = float(np.sum(u * out.values))
            if not want_grads:
                return loss, None
            grads = _linear_probe_gradients(vg, cc, cfg, phi, u)
            return loss, grads
        out, tape = ilpo_forward(vg, cc, cfg)
        loss = float(np.sum(u * out.values))
        if not want_grads:
            return loss, None
        return loss, ilpo_backward(tape, VoxelGrid(u))

    _, grads = loss_and_grads(c.values, input_grid.values, True)

    mask = structural_mask(cfg.L)
    active = np.argwhere(np.broadcast_to(mask, c.values.shape) > 0)
    coeff_picks = active[
        rng.choice(len(active), size=min(n_coeff_samples, len(active)), replace=False)
    ]
    flat_input = input_grid.values.size
    input_picks = rng.choice(flat_input, size=min(n_input_samples, flat_input), replace=False)

    max_rel = 0.0
    for coord in coeff_picks:
        idx = tuple(coord)
        plus = c.values.copy()
        minus = c.values.copy()
        plus[idx] += fd_step
        minus[idx] -= fd_step
        lp, _ = loss_and_grads(plus, input_grid.values, False)
        lm, _ = loss_and_grads(minus, input_grid.values, False)
        numeric = (lp - lm) / (2 * fd_step)
        analytic = grads.d_coefficients[idx]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)
    for flat_idx in input_picks:
        idx = np.unravel_index(flat_idx, input_grid.values.shape)
        plus = input_grid.values.copy()
        minus = input_grid.values.copy()
        plus[idx] += fd_step
        minus[idx] -= fd_step
        lp, _ = loss_and_grads(c.values, plus, False)
        lm, _ = loss_and_grads(c.values, minus, False)
        numeric = (lp - lm) / (2 * fd_step)
        analytic = grads.d_input[idx]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)

    return {
        "max_relative_error": max_rel,
        "n_checked": len(coeff_picks) + len(input_picks),
        "attempts": attempts,
        "mode": mode,
        "pooling": cfg.pooling if mode == "pooled" else "linear",
    }


def _forward_dims(input_grid: VoxelGrid, cfg: IlpoLayerConfig) -> tuple:
    if cfg.padding == "same":
        return input_grid.dims
    return tuple(d - cfg.L + 1 for d in input_grid.dims)
