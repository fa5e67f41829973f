"""Learnable filter parameterization and its expansion into voxel kernels.

A filter bank of odd linear size L is parameterized per radial shell (the
distinct voxel radii of the centered L^3 cube) by spherical-harmonic
coefficients of degree l < L. The tensor product of a radial coefficient
g_l^{m1}(r) with a harmonic Y_l^{m2} yields one L^3 voxel kernel per
(l, m1, m2), which is what the coefficient convolution consumes.

The center voxel has no defined direction, so only its degree-0 coefficient
is active; higher-degree entries on the r=0 shell are structurally zero and
re-masked after every construction or gradient update.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .special_functions import SphericalAngle, real_spherical_harmonic

__all__ = [
    "FilterGeometry",
    "FilterCoefficients",
    "ExpandedFilter",
    "filter_geometry",
    "expand_filter",
    "random_filter",
    "radial_component",
    "coefficient_index",
    "coefficient_count",
    "save_filter",
    "load_filter",
]

FILTER_FORMAT = "ILPOFILT1"


def coefficient_count(L: int) -> int:
    """Number of (l, m1, m2) kernel triples for band limit L: L(2L-1)(2L+1)/3."""
    return L * (2 * L - 1) * (2 * L + 1) // 3


def coefficient_index(L: int, l: int, m1: int, m2: int) -> int:
    """Flat position of the (l, m1, m2) triple; degree-major, m from -l to l."""
    if not 0 <= l < L:
        raise ValueError(f"degree l={l} outside 0 <= l < L={L}")
    if abs(m1) > l or abs(m2) > l:
        raise ValueError(f"orders ({m1}, {m2}) outside |m| <= l={l}")
    return coefficient_count(l) + (m1 + l) * (2 * l + 1) + (m2 + l)


def coefficient_triples(L: int) -> list[tuple[int, int, int]]:
    """All (l, m1, m2) triples in flat order."""
    return [
        (l, m1, m2)
        for l in range(L)
        for m1 in range(-l, l + 1)
        for m2 in range(-l, l + 1)
    ]


@dataclass(frozen=True, eq=False)
class FilterGeometry:
    """Radial/angular layout of the centered L^3 filter cube.

    ``shells`` lists the distinct voxel radii in ascending order (shell 0 is
    the center voxel). ``shell_index`` maps each voxel to its shell, and
    ``harmonics[l][m + l]`` holds Y_l^m sampled at every voxel direction
    (the center voxel uses the +z direction; it only ever multiplies the
    degree-0 coefficient).
    """

    L: int
    shells: np.ndarray
    shell_index: np.ndarray
    harmonics: tuple

    def __post_init__(self):
        self.shells.setflags(write=False)
        self.shell_index.setflags(write=False)
        for table in self.harmonics:
            table.setflags(write=False)

    @property
    def n_shells(self) -> int:
        return len(self.shells)

    def free_parameter_count(self) -> int:
        """Active coefficients per channel pair: L^2 per positive-radius shell, +1."""
        return (self.n_shells - 1) * self.L**2 + 1


@lru_cache(maxsize=None)
def filter_geometry(L: int) -> FilterGeometry:
    """Geometry of the centered L^3 cube (L odd)."""
    if L < 1 or L % 2 == 0:
        raise ValueError(f"filter size L={L} must be odd and >= 1")
    half = L // 2
    sq_radii = sorted(
        {
            dx * dx + dy * dy + dz * dz
            for dx in range(-half, half + 1)
            for dy in range(-half, half + 1)
            for dz in range(-half, half + 1)
        }
    )
    shell_of_sq = {sq: i for i, sq in enumerate(sq_radii)}
    shell_index = np.empty((L, L, L), dtype=np.intp)
    angles = {}
    for i in range(L):
        for j in range(L):
            for k in range(L):
                dx, dy, dz = i - half, j - half, k - half
                shell_index[i, j, k] = shell_of_sq[dx * dx + dy * dy + dz * dz]
                if (dx, dy, dz) == (0, 0, 0):
                    angles[i, j, k] = SphericalAngle(0.0, 0.0)
                else:
                    angles[i, j, k] = SphericalAngle.from_vector(dx, dy, dz)
    harmonics = []
    for l in range(L):
        table = np.empty((2 * l + 1, L, L, L))
        for m in range(-l, l + 1):
            for (i, j, k), ang in angles.items():
                table[m + l, i, j, k] = real_spherical_harmonic(l, m, ang)
        harmonics.append(table)
    return FilterGeometry(
        L=L,
        shells=np.sqrt(np.array(sq_radii, dtype=float)),
        shell_index=shell_index,
        harmonics=tuple(harmonics),
    )


class FilterCoefficients:
    """Radial-shell coefficients of one filter bank.

    ``values`` is indexed (out, in, l, m + L - 1, shell); entries with
    |m| > l, and entries with l > 0 on the center shell, are structurally
    zero and re-masked on construction.
    """

    def __init__(self, geometry: FilterGeometry, values: np.ndarray):
        values = np.array(values, dtype=float)
        L = geometry.L
        expected_tail = (L, 2 * L - 1, geometry.n_shells)
        if values.ndim != 5 or values.shape[2:] != expected_tail:
            raise ValueError(
                f"coefficient tensor shape {values.shape} incompatible with "
                f"(out, in) + {expected_tail}"
            )
        self.geometry = geometry
        self.values = values
        self.apply_structural_mask()

    @property
    def L(self) -> int:
        return self.geometry.L

    @property
    def d_out(self) -> int:
        return self.values.shape[0]

    @property
    def d_in(self) -> int:
        return self.values.shape[1]

    def apply_structural_mask(self) -> None:
        """Zero the entries the parameterization does not use."""
        self.values *= structural_mask(self.L)

    def copy(self) -> "FilterCoefficients":
        return FilterCoefficients(self.geometry, self.values.copy())

    def radial_value(self, l: int, m: int) -> np.ndarray:
        """Coefficient row g_l^m over shells, shape (out, in, n_shells)."""
        return self.values[:, :, l, m + self.L - 1, :]


@lru_cache(maxsize=None)
def structural_mask(L: int) -> np.ndarray:
    """1.0 on active coefficient slots, 0.0 on structural zeros."""
    geometry = filter_geometry(L)
    mask = np.zeros((L, 2 * L - 1, geometry.n_shells))
    for l in range(L):
        for m in range(-l, l + 1):
            mask[l, m + L - 1, :] = 1.0
    mask[1:, :, 0] = 0.0  # center voxel supports only degree 0
    mask.setflags(write=False)
    return mask


@dataclass(frozen=True, eq=False)
class ExpandedFilter:
    """Voxelized kernels g_l^{m1}(r) * Y_l^{m2}, one L^3 cube per (l, m1, m2).

    ``kernels`` has shape (out, in, n_coef, L, L, L) with the flat
    coefficient order of ``coefficient_index``.
    """

    L: int
    kernels: np.ndarray

    def __post_init__(self):
        self.kernels.setflags(write=False)

    @property
    def d_out(self) -> int:
        return self.kernels.shape[0]

    @property
    def d_in(self) -> int:
        return self.kernels.shape[1]

    def kernel(self, out: int, inp: int, l: int, m1: int, m2: int) -> np.ndarray:
        return self.kernels[out, inp, coefficient_index(self.L, l, m1, m2)]


def expand_filter(c: FilterCoefficients) -> ExpandedFilter:
    """Tensor product of radial coefficients with the harmonic voxel tables.

    Linear in the coefficients; kernel (l, m1, m2) holds
    g_l^{m1}(r_v) * Y_l^{m2}(direction of v) at every voxel v.
    """
    geo = c.geometry
    L = geo.L
    kernels = np.empty((c.d_out, c.d_in, coefficient_count(L), L, L, L))
    pos = 0
    for l in range(L):
        # radial profile per voxel: (out, in, 2l+1, L, L, L)
        rows = c.values[:, :, l, L - 1 - l : L + l, :]
        per_voxel = rows[:, :, :, geo.shell_index]
        block = np.einsum("oimxyz,nxyz->oimnxyz", per_voxel, geo.harmonics[l], optimize=False)
        width = (2 * l + 1) ** 2
        kernels[:, :, pos : pos + width] = block.reshape(
            c.d_out, c.d_in, width, L, L, L
        )
        pos += width
    return ExpandedFilter(L=L, kernels=kernels)


def random_filter(
    seed: int, L: int, d_in: int, d_out: int, scale: float = 1.0
) -> FilterCoefficients:
    """Zero-mean Gaussian coefficients of the given scale, deterministic per seed."""
    geo = filter_geometry(L)
    rng = np.random.default_rng(seed)
    values = scale * rng.standard_normal((d_out, d_in, L, 2 * L - 1, geo.n_shells))
    return FilterCoefficients(geo, values)


def radial_component(c: FilterCoefficients) -> FilterCoefficients:
    """Copy with every degree l > 0 zeroed; expands to shell-constant kernels."""
    values = np.zeros_like(c.values)
    values[:, :, 0] = c.values[:, :, 0]
    return FilterCoefficients(c.geometry, values)


def rotate_filter(c: FilterCoefficients, e) -> FilterCoefficients:
    """Coefficients of the rotated filter g'(v) = g(R_e v).

    Each degree's coefficient row transforms by right multiplication with the
    real Wigner matrix of ``e``; shells never mix.
    """
    from .so3 import wigner_D_matrix

    L = c.L
    values = np.zeros_like(c.values)
    for l in range(L):
        rows = c.values[:, :, l, L - 1 - l : L + l, :]
        rotated = np.einsum(
            "oims,mn->oins", rows, wigner_D_matrix(l, e), optimize=False
        )
        values[:, :, l, L - 1 - l : L + l, :] = rotated
    return FilterCoefficients(c.geometry, values)


def filter_voxel_values(c: FilterCoefficients) -> np.ndarray:
    """Real-space filter cube, shape (out, in, L, L, L).

    Voxel v holds sum over (l, m) of g_l^m(r_v) Y_l^m(direction of v) — the
    single kernel an ordinary convolution would use.
    """
    geo = c.geometry
    L = geo.L
    out = np.zeros((c.d_out, c.d_in, L, L, L))
    for l in range(L):
        rows = c.values[:, :, l, L - 1 - l : L + l, :]
        per_voxel = rows[:, :, :, geo.shell_index]
        out += np.einsum("oimxyz,mxyz->oixyz", per_voxel, geo.harmonics[l], optimize=False)
    return out


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------


def save_filter(path, c: FilterCoefficients) -> None:
    """Write coefficients as UTF-8 JSON (format tag ILPOFILT1).

    The nested ``coeffs`` array is [out][in][l][m][shell] with m listed from
    -l to l; radii carry 17 significant digits.
    """
    L = c.L
    coeffs = [
        [
            [
                [
                    [float(c.values[o, i, l, m + L - 1, s]) for s in range(c.geometry.n_shells)]
                    for m in range(-l, l + 1)
                ]
                for l in range(L)
            ]
            for i in range(c.d_in)
        ]
        for o in range(c.d_out)
    ]
    doc = {
        "format": FILTER_FORMAT,
        "L": L,
        "d_in": c.d_in,
        "d_out": c.d_out,
        "shells": [float(format(r, ".17g")) for r in c.geometry.shells],
        "coeffs": coeffs,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


class FilterFormatError(ValueError):
    """Raised when a filter file does not match the ILPOFILT1 layout."""


def load_filter(path) -> FilterCoefficients:
    """Read an ILPOFILT1 JSON file back into FilterCoefficients."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FilterFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != FILTER_FORMAT:
        raise FilterFormatError(
            f"{path}: field 'format' is {doc.get('format')!r}, expected {FILTER_FORMAT!r}"
        )
    try:
        L = int(doc["L"])
        d_in = int(doc["d_in"])
        d_out = int(doc["d_out"])
        shells = np.asarray(doc["shells"], dtype=float)
        coeffs = doc["coeffs"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FilterFormatError(f"{path}: missing or malformed field ({exc})") from exc
    geo = filter_geometry(L)
    if shells.shape != geo.shells.shape or np.max(np.abs(shells - geo.shells)) > 1e-9:
        raise FilterFormatError(
            f"{path}: field 'shells' does not match the radii of an L={L} cube"
        )
    values = np.zeros((d_out, d_in, L, 2 * L - 1, geo.n_shells))
    try:
        for o in range(d_out):
            for i in range(d_in):
                for l in range(L):
                    rows = coeffs[o][i][l]
                    if len(rows) != 2 * l + 1:
                        raise FilterFormatError(
                            f"{path}: field 'coeffs[{o}][{i}][{l}]' has {len(rows)} "
                            f"rows, expected {2 * l + 1}"
                        )
                    for m in range(-l, l + 1):
                        row = rows[m + l]
                        if len(row) != geo.n_shells:
                            raise FilterFormatError(
                                f"{path}: field 'coeffs[{o}][{i}][{l}][{m + l}]' has "
                                f"{len(row)} shells, expected {geo.n_shells}"
                            )
                        values[o, i, l, m + L - 1] = row
    except (IndexError, TypeError) as exc:
        raise FilterFormatError(f"{path}: field 'coeffs' has wrong nesting ({exc})") from exc
    return FilterCoefficients(geo, values)
