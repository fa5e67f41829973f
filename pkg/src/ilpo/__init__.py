"""Orientation-invariant 3D convolution for regular voxel grids."""

from .special_functions import (
    SphericalAngle,
    QuadratureRule,
    legendre_assoc,
    real_spherical_harmonic,
    gauss_legendre,
    wigner_d_pair,
)
from .so3 import (
    EulerZYZ,
    SO3Grid,
    WignerCoefficients,
    SO3Function,
    make_so3_grid,
    euler_to_matrix,
    matrix_to_euler,
    wigner_D_real,
    wigner_D_matrix,
    integrate_so3,
    decompose_so3,
    synthesize_so3,
    rotate_so3_function,
)

__version__ = "0.1.0"
