"""Circular cone-beam CT: geometry, Joseph projector pair, FDK and iterative
least-squares reconstruction, dose simulation and enhancement stages."""

__version__ = "0.1.0"

from .arrays import Sinogram, Volume, load, mse, psnr, read_array, read_header, write_array
from .geometry import ConeBeamGeometry, make_circular
from .projector import SystemOperator, back_project, forward_project, operator_norm_sq

__all__ = [
    "ConeBeamGeometry", "Sinogram", "SystemOperator", "Volume", "back_project", "forward_project",
    "load", "make_circular", "mse", "operator_norm_sq", "psnr", "read_array", "read_header",
    "write_array",
]
