from .estimators import (
    RECONSTRUCTORS, FdkReconstructor, GdReconstructor, NagReconstructor, SirtReconstructor,
    make_reconstructor,
)
from .fdk import FdkConfig, fdk, filter_projections, ramp_response
from .iterative import LsSolverConfig, SolverError, SolverReport, gd_ls, nag_ls, sirt, sirt_weights

__all__ = [
    "RECONSTRUCTORS", "FdkConfig", "FdkReconstructor", "GdReconstructor", "LsSolverConfig",
    "NagReconstructor", "SirtReconstructor", "SolverError", "SolverReport",
    "fdk", "filter_projections", "gd_ls", "make_reconstructor", "nag_ls", "ramp_response",
    "sirt", "sirt_weights",
]
