"""Synthetic ground-truth volumes and exact line-integral oracles.

Phantom coordinates are normalised: one unit is half of the largest volume
extent, so a cubic volume spans exactly ``[-1, 1]^3`` and a non-cubic one is
cropped rather than stretched.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .arrays import Sinogram, Volume
from .geometry import ConeBeamGeometry, detector_coordinates


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple
    semi_axes: tuple
    euler_z: float = 0.0
    density: float = 1.0

    def __post_init__(self):
        if len(self.center) != 3 or len(self.semi_axes) != 3:
            raise ValueError("center and semi_axes need three components")
        if not all(a > 0 for a in self.semi_axes):
            raise ValueError(f"semi_axes must be > 0, got {self.semi_axes}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "semi_axes", tuple(float(a) for a in self.semi_axes))

    def rotation(self) -> np.ndarray:
        """Columns are the ellipsoid's principal axes in world coordinates."""
        c, s = math.cos(self.euler_z), math.sin(self.euler_z)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask for ``points`` of shape ``(..., 3)`` (boundary inclusive)."""
        local = (np.asarray(points, dtype=np.float64) - self.center) @ self.rotation()
        return np.sum((local / self.semi_axes) ** 2, axis=-1) <= 1.0


def shepp_logan_table() -> list:
    """The Kak-Slaney 3-D Shepp-Logan ellipsoids, read from the bundled CSV."""
    text = resources.files("conebeam.data").joinpath("shepp_logan_kak_slaney.csv").read_text()
    rows = csv.DictReader(line for line in io.StringIO(text) if not line.startswith("#"))
    return [
        Ellipsoid(
            center=(float(r["center_x"]), float(r["center_y"]), float(r["center_z"])),
            semi_axes=(float(r["axis_x"]), float(r["axis_y"]), float(r["axis_z"])),
            euler_z=math.radians(float(r["euler_z_deg"])),
            density=float(r["density"]),
        )
        for r in rows
    ]


def normalized_grid(nx: int, ny: int, nz: int) -> np.ndarray:
    """Voxel-centre coordinates, shape ``(nz, ny, nx, 3)`` with components (x, y, z)."""
    half = max(nx, ny, nz) / 2.0
    axes = [(np.arange(n) - (n - 1) / 2.0) / half for n in (nx, ny, nz)]
    z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    return np.stack([x, y, z], axis=-1)


def rasterize(ellipsoids, nx: int, ny: int, nz: int, voxel_size: float = 1.0,
              dtype=np.float32) -> Volume:
    """Sum of densities of the ellipsoids containing each voxel centre, clamped at 0."""
    points = normalized_grid(nx, ny, nz)
    acc = np.zeros((nz, ny, nx), dtype=np.float64)
    for e in ellipsoids:
        acc[e.contains(points)] += e.density
    np.maximum(acc, 0.0, out=acc)
    return Volume(acc.astype(dtype), voxel_size)


def shepp_logan_3d(nx: int, ny: int, nz: int, voxel_size: float = 1.0, dtype=np.float32) -> Volume:
    if min(nx, ny, nz) < 8:
        raise ValueError(f"Shepp-Logan needs every dimension >= 8, got {(nx, ny, nz)}")
    return rasterize(shepp_logan_table(), nx, ny, nz, voxel_size, dtype)


def perturbed_shepp_logan_table(seed: int = 0, jitter: float = 0.05) -> list:
    """A random Shepp-Logan variant, for tuning on data disjoint from the test phantom.

    The whole head is scaled by ``1 +- jitter`` and turned about z by up to
    ``3 * jitter`` rad; the eight inner features additionally move by up to
    ``jitter`` and have their densities scaled by ``1 +- 10 * jitter``.
    """
    if not 0 <= jitter <= 0.1:
        raise ValueError(f"jitter must lie in [0, 0.1], got {jitter}")
    rng = np.random.default_rng(seed)
    scale = 1.0 + rng.uniform(-jitter, jitter)
    turn = rng.uniform(-3 * jitter, 3 * jitter)
    c, s = math.cos(turn), math.sin(turn)
    spin = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    out = []
    for i, e in enumerate(shepp_logan_table()):
        center = np.asarray(e.center)
        density = e.density
        if i >= 2:
            center = center + rng.uniform(-jitter, jitter, 3)
            density *= 1.0 + rng.uniform(-10 * jitter, 10 * jitter)
        out.append(Ellipsoid(tuple(scale * spin @ center), tuple(scale * a for a in e.semi_axes),
                             e.euler_z + turn, density))
    return out


def perturbed_shepp_logan(nx: int, ny: int, nz: int, voxel_size: float = 1.0, seed: int = 0,
                          jitter: float = 0.05, dtype=np.float32) -> Volume:
    if min(nx, ny, nz) < 8:
        raise ValueError(f"Shepp-Logan needs every dimension >= 8, got {(nx, ny, nz)}")
    return rasterize(perturbed_shepp_logan_table(seed, jitter), nx, ny, nz, voxel_size, dtype)


def _check_sphere(center, radius):
    if len(center) != 3:
        raise ValueError("center needs three components")
    if not radius > 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    if any(abs(c) > 1.0 for c in center):
        raise ValueError(f"sphere centre {tuple(center)} lies outside [-1, 1]^3")


def sphere_phantom(center, radius: float, value: float, nx: int, ny: int, nz: int,
                   voxel_size: float = 1.0, dtype=np.float32) -> Volume:
    """Voxels whose centre lies inside the sphere get ``value``, all others 0."""
    _check_sphere(center, radius)
    points = normalized_grid(nx, ny, nz)
    inside = np.sum((points - np.asarray(center, dtype=np.float64)) ** 2, axis=-1) <= radius**2
    return Volume(np.where(inside, value, 0.0).astype(dtype), voxel_size)


def _unit_scale(geom: ConeBeamGeometry) -> float:
    """Millimetres per normalised phantom unit."""
    return max(geom.nx, geom.ny, geom.nz) * geom.voxel_size / 2.0


def _rays(geom: ConeBeamGeometry):
    """Sources ``(V, 1, 1, 3)`` and unit directions ``(V, nv, nu, 3)`` of every ray, in mm."""
    src, det, eu = geom.view_vectors()
    u, v = detector_coordinates(geom)
    pix = (det[:, None, None, :]
           + u[None, None, :, None] * eu[:, None, None, :]
           + v[None, :, None, None] * np.array([0.0, 0.0, 1.0]))
    direction = pix - src[:, None, None, :]
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    return src[:, None, None, :], direction


def ray_distances(geom: ConeBeamGeometry, point_mm) -> np.ndarray:
    """Perpendicular distance (mm) from ``point_mm`` to every ray line, sinogram-shaped."""
    src, direction = _rays(geom)
    offset = np.asarray(point_mm, dtype=np.float64) - src
    along = np.sum(offset * direction, axis=-1, keepdims=True)
    return np.linalg.norm(offset - along * direction, axis=-1)


def analytic_sphere_sinogram(geom: ConeBeamGeometry, center, radius: float, value: float,
                             dtype=np.float64) -> Sinogram:
    """Exact ray integrals ``2 * value * sqrt(r^2 - d^2)`` of a uniform sphere."""
    _check_sphere(center, radius)
    scale = _unit_scale(geom)
    r_mm = radius * scale
    d = ray_distances(geom, np.asarray(center, dtype=np.float64) * scale)
    chord = 2.0 * np.sqrt(np.clip(r_mm * r_mm - d * d, 0.0, None))
    return Sinogram((value * chord).astype(dtype), geom.du, geom.dv)


def analytic_ellipsoid_sinogram(geom: ConeBeamGeometry, ellipsoids, dtype=np.float64) -> Sinogram:
    """Exact ray integrals of a sum of uniform ellipsoids (no voxelisation)."""
    scale = _unit_scale(geom)
    src, direction = _rays(geom)
    out = np.zeros(geom.sinogram_shape, dtype=np.float64)
    for e in ellipsoids:
        axes = np.asarray(e.semi_axes) * scale
        rot = e.rotation()
        # map into the frame where the ellipsoid is the unit sphere
        s_local = ((src - np.asarray(e.center) * scale) @ rot) / axes
        d_local = (direction @ rot) / axes
        a = np.sum(d_local * d_local, axis=-1)
        b = np.sum(s_local * d_local, axis=-1)
        c = np.sum(s_local * s_local, axis=-1) - 1.0
        disc = np.clip(b * b - a * c, 0.0, None)
        # direction has unit length, so the parameter span is already in mm
        out += e.density * 2.0 * np.sqrt(disc) / a
    return Sinogram(out.astype(dtype), geom.du, geom.dv)


def shepp_logan_sinogram(geom: ConeBeamGeometry, dtype=np.float64) -> Sinogram:
    return analytic_ellipsoid_sinogram(geom, shepp_logan_table(), dtype)
