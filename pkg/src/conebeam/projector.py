"""Matched Joseph forward/back projector pair for circular cone-beam scans."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator

from . import _kernels
from ._threads import configure_threads
from .arrays import Sinogram, Volume, as_ndarray
from .geometry import ConeBeamGeometry

METHODS = ("joseph",)

# Guard for dense_matrix: 4096 voxels x 16384 rays of float64 is 512 MiB.
MAX_DENSE_VOXELS = 4096
MAX_DENSE_RAYS = 16384


@dataclass(frozen=True)
class SystemOperator:
    """The linear map ``A`` from voxel values to ray sums for ``geom``."""

    geom: ConeBeamGeometry
    method: str = "joseph"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown projector method {self.method!r}; known: {METHODS}")

    @property
    def domain_shape(self) -> tuple:
        return self.geom.volume_shape

    @property
    def range_shape(self) -> tuple:
        return self.geom.sinogram_shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Apply ``A`` to a ``(nz, ny, nx)`` array; returns a float64 sinogram array."""
        g = self.geom
        x = np.asarray(x)
        if x.shape != g.volume_shape:
            raise ValueError(f"volume shape {x.shape} does not match geometry {g.volume_shape}")
        pad = _kernels.PAD
        flat = np.pad(np.asarray(x, dtype=np.float64), pad).ravel()
        src, det, eu = g.view_vectors()
        out = np.empty(g.sinogram_shape, dtype=np.float64)
        configure_threads()
        _kernels.joseph_forward(flat, g.nx, g.ny, g.nz, g.voxel_size, src, det, eu,
                                g.nu, g.nv, g.du, g.dv, out)
        return out

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """Apply ``A^T`` to a ``(num_views, nv, nu)`` array; returns a float64 volume array."""
        g = self.geom
        y = np.asarray(y)
        if y.shape != g.sinogram_shape:
            raise ValueError(f"sinogram shape {y.shape} does not match geometry {g.sinogram_shape}")
        y = np.ascontiguousarray(y, dtype=np.float64)
        src, det, eu = g.view_vectors()
        n_chunks = max(1, min(configure_threads(), g.num_views))
        pad = _kernels.PAD
        padded = tuple(n + 2 * pad for n in g.volume_shape)
        out = np.empty(math.prod(padded), dtype=np.float64)
        _kernels.joseph_backward(y, g.nx, g.ny, g.nz, g.voxel_size, src, det, eu,
                                 g.nu, g.nv, g.du, g.dv, n_chunks, out)
        return out.reshape(padded)[pad:-pad, pad:-pad, pad:-pad].copy()

    def normal(self, x: np.ndarray) -> np.ndarray:
        return self.adjoint(self.forward(x))

    def as_linear_operator(self) -> LinearOperator:
        """Flattened view of ``A`` as a :class:`scipy.sparse.linalg.LinearOperator`."""
        g = self.geom
        n_vox = math.prod(g.volume_shape)
        n_rays = math.prod(g.sinogram_shape)
        return LinearOperator(
            (n_rays, n_vox),
            matvec=lambda v: self.forward(np.reshape(v, g.volume_shape)).ravel(),
            rmatvec=lambda v: self.adjoint(np.reshape(v, g.sinogram_shape)).ravel(),
            dtype=np.float64,
        )


def forward_project(op: SystemOperator, x) -> Sinogram:
    """Ray sums of ``x`` by Joseph's method, one ray per detector pixel centre."""
    data = op.forward(as_ndarray(x))
    dtype = x.dtype if isinstance(x, Volume) else np.float32
    return Sinogram(data.astype(dtype, copy=False), op.geom.du, op.geom.dv)


def back_project(op: SystemOperator, y) -> Volume:
    """Exact transpose of :func:`forward_project`."""
    data = op.adjoint(as_ndarray(y))
    dtype = y.dtype if isinstance(y, Sinogram) else np.float32
    return Volume(data.astype(dtype, copy=False), op.geom.voxel_size)


def dense_matrix(op: SystemOperator) -> np.ndarray:
    """Materialise ``A`` column by column (tiny geometries only).

    Rows follow the sinogram memory order, columns the volume memory order.
    """
    g = op.geom
    n_vox = math.prod(g.volume_shape)
    n_rays = math.prod(g.sinogram_shape)
    if n_vox > MAX_DENSE_VOXELS or n_rays > MAX_DENSE_RAYS:
        raise ValueError(
            f"dense_matrix refused: {n_vox} voxels x {n_rays} rays exceeds the "
            f"{MAX_DENSE_VOXELS} x {MAX_DENSE_RAYS} guard"
        )
    mat = np.empty((n_rays, n_vox), dtype=np.float64)
    basis = np.zeros(n_vox, dtype=np.float64)
    for j in range(n_vox):
        basis[j] = 1.0
        mat[:, j] = op.forward(basis.reshape(g.volume_shape)).ravel()
        basis[j] = 0.0
    return mat


def operator_norm_sq(op: SystemOperator, max_iters: int = 50, tol: float = 1e-6, seed: int = 0):
    """Estimate ``lambda_max(A^T A) = ||A||^2`` by power iteration.

    Returns ``(estimate, converged)``; the estimate is the Rayleigh quotient
    of the last iterate, so it never exceeds the true value.
    """
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    if not tol > 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.domain_shape)
    x /= np.linalg.norm(x)
    estimate = 0.0
    converged = False
    for _ in range(max_iters):
        y = op.normal(x)
        previous, estimate = estimate, float(np.vdot(x, y))
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0, True
        x = y / norm
        if abs(estimate - previous) < tol * abs(estimate):
            converged = True
            break
    return estimate, converged
