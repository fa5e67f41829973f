"""Plain 3D coefficient convolution and the voxel-grid container/file format.

Each expansion kernel is convolved with the input once, producing one
coefficient map per (l, m1, m2) triple and output channel; the maps are
already summed over input channels. Contractions run through
``numpy.einsum`` with a fixed serial reduction order, so results are
bit-reproducible regardless of BLAS threading.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .filter import ExpandedFilter, coefficient_count, coefficient_index

__all__ = [
    "VoxelGrid",
    "CoefficientMaps",
    "coefficient_convolution",
    "plain_convolution",
    "write_voxel_grid",
    "read_voxel_grid",
    "VoxelFormatError",
]

VOXEL_MAGIC = b"ILPOVOX1"


@dataclass(eq=False)
class VoxelGrid:
    """Multi-channel scalar field on a regular cubic lattice.

    ``values`` has shape (channels, X, Y, Z); the serialized layout is the
    C-order flattening of that array.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 4:
            raise ValueError(f"voxel values must be 4-d (C, X, Y, Z), got shape {values.shape}")
        if min(values.shape) < 1:
            raise ValueError(f"voxel dims must be positive, got shape {values.shape}")
        self.values = values

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape[1:]

    def copy(self) -> "VoxelGrid":
        return VoxelGrid(self.values.copy())


@dataclass(eq=False)
class CoefficientMaps:
    """Per-(l, m1, m2) convolution outputs, summed over input channels.

    ``values`` has shape (out, n_coef, X, Y, Z) with the flat coefficient
    order of ``filter.coefficient_index``.
    """

    L: int
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape[1] != coefficient_count(self.L):
            raise ValueError(
                f"{self.values.shape[1]} coefficient fields, expected "
                f"{coefficient_count(self.L)} for band limit {self.L}"
            )

    @property
    def d_out(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape[2:]

    def field(self, out: int, l: int, m1: int, m2: int) -> np.ndarray:
        return self.values[out, coefficient_index(self.L, l, m1, m2)]

    def dense_by_degree(self) -> np.ndarray:
        """Zero-padded layout (out, L, 2L-1, 2L-1, X, Y, Z) for factored sums."""
        L = self.L
        off = L - 1
        out = np.zeros((self.d_out, L, 2 * L - 1, 2 * L - 1) + self.dims)
        pos = 0
        for l in range(L):
            width = 2 * l + 1
            block = self.values[:, pos : pos + width * width]
            out[:, l, off - l : off + l + 1, off - l : off + l + 1] = block.reshape(
                (self.d_out, width, width) + self.dims
            )
            pos += width * width
        return out


def _input_windows(input_values: np.ndarray, L: int, padding: str) -> np.ndarray:
    """Sliding L^3 windows of the (possibly zero-padded) input.

    Returns a view of shape (C, X', Y', Z', L, L, L) where primed dims are
    the output extent for the requested padding.
    """
    if padding == "same":
        half = L // 2
        padded = np.pad(input_values, ((0, 0),) + ((half, half),) * 3)
    elif padding == "valid":
        if min(input_values.shape[1:]) < L:
            raise ValueError(
                f"input dims {input_values.shape[1:]} smaller than filter size {L} "
                "for valid padding"
            )
        padded = input_values
    else:
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    return np.lib.stride_tricks.sliding_window_view(padded, (L, L, L), axis=(1, 2, 3))


def coefficient_convolution(
    input_grid: VoxelGrid, filt: ExpandedFilter, padding: str = "same"
) -> CoefficientMaps:
    """One centered 3D convolution of the input with every expansion kernel.

    Output voxel (x, y, z) of map (l, m1, m2) is the sum over input channels
    and kernel offsets of input[x + i - L//2, ...] * kernel[i, j, k]; under
    "same" padding out-of-range reads are zero, under "valid" the spatial
    extent shrinks by L - 1. Bilinear in input and kernels.
    """
    if input_grid.channels != filt.d_in:
        raise ValueError(
            f"input has {input_grid.channels} channels, filter expects {filt.d_in}"
        )
    windows = _input_windows(input_grid.values, filt.L, padding)
    maps = np.einsum("cxyzijk,oscijk->osxyz", windows, filt.kernels, optimize=False)
    return CoefficientMaps(L=filt.L, values=maps)


def plain_convolution(
    input_grid: VoxelGrid, kernels: np.ndarray, padding: str = "same"
) -> np.ndarray:
    """Ordinary multi-channel 3D convolution with centered (out, in, L, L, L) kernels."""
    if input_grid.channels != kernels.shape[1]:
        raise ValueError(
            f"input has {input_grid.channels} channels, kernels expect {kernels.shape[1]}"
        )
    windows = _input_windows(input_grid.values, kernels.shape[2], padding)
    return np.einsum("cxyzijk,ocijk->oxyz", windows, kernels, optimize=False)


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------


class VoxelFormatError(ValueError):
    """Raised when a voxel file does not match the ILPOVOX1 layout."""


def write_voxel_grid(path, grid: VoxelGrid) -> None:
    """Binary dump: magic ILPOVOX1, four u32-le dims (C, X, Y, Z), f64-le values."""
    c, (x, y, z) = grid.channels, grid.dims
    with open(path, "wb") as fh:
        fh.write(VOXEL_MAGIC)
        fh.write(struct.pack("<4I", c, x, y, z))
        fh.write(np.ascontiguousarray(grid.values, dtype="<f8").tobytes())


def read_voxel_grid(path) -> VoxelGrid:
    """Read a voxel file, naming the offending byte offset on malformed input."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != VOXEL_MAGIC:
        raise VoxelFormatError(
            f"{path}: bad magic {data[:8]!r} at offset 0, expected {VOXEL_MAGIC!r}"
        )
    if len(data) < 24:
        raise VoxelFormatError(f"{path}: header truncated at offset {len(data)}, need 24 bytes")
    c, x, y, z = struct.unpack_from("<4I", data, 8)
    if min(c, x, y, z) < 1:
        raise VoxelFormatError(f"{path}: nonpositive dimension in header at offset 8")
    expected = 24 + 8 * c * x * y * z
    if len(data) != expected:
        raise VoxelFormatError(
            f"{path}: payload ends at offset {len(data)}, expected {expected} "
            f"for dims ({c}, {x}, {y}, {z})"
        )
    values = np.frombuffer(data, dtype="<f8", offset=24).reshape(c, x, y, z)
    return VoxelGrid(values.astype(float))
