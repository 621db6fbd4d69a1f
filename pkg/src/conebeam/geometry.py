"""Circular cone-beam acquisition geometry.

Coordinates are right-handed in millimetres. The volume is centred on the
origin and the source rotates about the z axis. For a view angle ``theta``
the source sits at ``sod * (cos theta, sin theta, 0)`` and the flat detector
is centred at ``-(sdd - sod) * (cos theta, sin theta, 0)``; its ``u`` axis is
the in-plane tangent ``(-sin theta, cos theta, 0)`` and its ``v`` axis is z.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

TWO_PI = 2.0 * math.pi

# Unstated acquisition parameters, pinned for the 256^3 / 360-view default.
DEFAULT_SOD = 575.0
DEFAULT_SDD = 1050.0
DEFAULT_PITCH = 1.0
DEFAULT_VOXEL_SIZE = 0.5

_INT_FIELDS = ("nu", "nv", "num_views", "nx", "ny", "nz")
_FLOAT_FIELDS = ("sod", "sdd", "du", "dv", "voxel_size")


class GeometryError(ValueError):
    """Raised when geometry parameters violate an invariant."""


@dataclass(frozen=True)
class ConeBeamGeometry:
    """Immutable description of a circular cone-beam scan.

    Use :func:`make_circular` for the usual uniformly sampled full turn;
    the constructor accepts arbitrary angle lists in ``[0, 2*pi)``.
    """

    sod: float
    sdd: float
    nu: int
    nv: int
    du: float
    dv: float
    num_views: int
    angles: tuple
    nx: int
    ny: int
    nz: int
    voxel_size: float
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        for name in _INT_FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise GeometryError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        for name in _FLOAT_FIELDS:
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise GeometryError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))

        if not self.sod > 0:
            raise GeometryError(f"sod must be > 0, got {self.sod}")
        if not self.sdd > self.sod:
            raise GeometryError(f"sdd must exceed sod, got sdd={self.sdd}, sod={self.sod}")
        if not self.du > 0:
            raise GeometryError(f"du must be > 0, got {self.du}")
        if not self.dv > 0:
            raise GeometryError(f"dv must be > 0, got {self.dv}")
        if not self.voxel_size > 0:
            raise GeometryError(f"voxel_size must be > 0, got {self.voxel_size}")
        if len(self.angles) != self.num_views:
            raise GeometryError(
                f"angles has length {len(self.angles)} but num_views={self.num_views}"
            )
        for a in self.angles:
            if not (0.0 <= a < TWO_PI):
                raise GeometryError(f"angles must lie in [0, 2*pi), got {a!r}")
        if not self.bounding_radius < self.sod:
            raise GeometryError(
                f"sod={self.sod} must exceed the volume's circumscribing radius "
                f"{self.bounding_radius:.4g} (voxel_size, nx, ny, nz too large)"
            )

    # -- derived quantities -------------------------------------------------
    @property
    def bounding_radius(self) -> float:
        return self.voxel_size * math.sqrt(self.nx**2 + self.ny**2 + self.nz**2) / 2.0

    @property
    def volume_shape(self) -> tuple:
        """Array shape of a volume, slowest axis first: ``(nz, ny, nx)``."""
        return (self.nz, self.ny, self.nx)

    @property
    def sinogram_shape(self) -> tuple:
        """Array shape of a sinogram, slowest axis first: ``(num_views, nv, nu)``."""
        return (self.num_views, self.nv, self.nu)

    @property
    def magnification(self) -> float:
        return self.sdd / self.sod

    def angles_array(self) -> np.ndarray:
        return np.asarray(self.angles, dtype=np.float64)

    def with_angles(self, angles) -> "ConeBeamGeometry":
        """Copy of this geometry with a different angle list."""
        params = self.to_dict()
        params["num_views"] = len(angles)
        return ConeBeamGeometry(angles=tuple(angles), **params)

    def view_vectors(self):
        """Per-view source, detector centre and detector u-axis, each ``(num_views, 3)``."""
        cached = self._cache.get("view_vectors")
        if cached is None:
            theta = self.angles_array()
            c, s = np.cos(theta), np.sin(theta)
            zero = np.zeros_like(theta)
            src = np.stack([self.sod * c, self.sod * s, zero], axis=1)
            det = np.stack([-(self.sdd - self.sod) * c, -(self.sdd - self.sod) * s, zero], axis=1)
            eu = np.stack([-s, c, zero], axis=1)
            cached = (src, det, eu)
            for arr in cached:
                arr.setflags(write=False)
            self._cache["view_vectors"] = cached
        return cached

    def to_dict(self) -> dict:
        """Scalar parameters (everything except the angle list)."""
        return {
            "sod": self.sod, "sdd": self.sdd,
            "nu": self.nu, "nv": self.nv, "du": self.du, "dv": self.dv,
            "num_views": self.num_views,
            "nx": self.nx, "ny": self.ny, "nz": self.nz, "voxel_size": self.voxel_size,
        }


def make_circular(
    sod: float = DEFAULT_SOD,
    sdd: float = DEFAULT_SDD,
    nu: int = 256,
    nv: int = 256,
    du: float = DEFAULT_PITCH,
    dv: float = DEFAULT_PITCH,
    num_views: int = 360,
    nx: int = 256,
    ny: int = 256,
    nz: int = 256,
    voxel_size: float = DEFAULT_VOXEL_SIZE,
) -> ConeBeamGeometry:
    """Full-turn circular scan with ``angles[i] = 2*pi*i / num_views``."""
    if isinstance(num_views, bool) or int(num_views) != num_views or num_views < 1:
        raise GeometryError(f"num_views must be a positive integer, got {num_views!r}")
    angles = tuple(TWO_PI * i / int(num_views) for i in range(int(num_views)))
    return ConeBeamGeometry(
        sod=sod, sdd=sdd, nu=nu, nv=nv, du=du, dv=dv, num_views=num_views,
        angles=angles, nx=nx, ny=ny, nz=nz, voxel_size=voxel_size,
    )


def _check_view(geom: ConeBeamGeometry, view_index: int) -> float:
    if not 0 <= view_index < geom.num_views:
        raise IndexError(f"view_index {view_index} out of range [0, {geom.num_views})")
    return geom.angles[view_index]


def source_position(geom: ConeBeamGeometry, view_index: int) -> np.ndarray:
    theta = _check_view(geom, view_index)
    return np.array([geom.sod * math.cos(theta), geom.sod * math.sin(theta), 0.0])


def detector_pixel_center(
    geom: ConeBeamGeometry, view_index: int, u_index: float, v_index: float
) -> np.ndarray:
    """Centre of detector pixel ``(u_index, v_index)`` for one view, in mm.

    Fractional indices are accepted so the exact detector centre of an
    even-sized detector can be addressed.
    """
    theta = _check_view(geom, view_index)
    if not 0 <= u_index <= geom.nu - 1:
        raise IndexError(f"u_index {u_index} out of range [0, {geom.nu - 1}]")
    if not 0 <= v_index <= geom.nv - 1:
        raise IndexError(f"v_index {v_index} out of range [0, {geom.nv - 1}]")
    c, s = math.cos(theta), math.sin(theta)
    u = (u_index - (geom.nu - 1) / 2.0) * geom.du
    v = (v_index - (geom.nv - 1) / 2.0) * geom.dv
    back = geom.sdd - geom.sod
    return np.array([-back * c - u * s, -back * s + u * c, v])


def detector_coordinates(geom: ConeBeamGeometry):
    """Physical ``u`` and ``v`` offsets (mm) of the pixel centres from the detector centre."""
    u = (np.arange(geom.nu) - (geom.nu - 1) / 2.0) * geom.du
    v = (np.arange(geom.nv) - (geom.nv - 1) / 2.0) * geom.dv
    return u, v


# -- config serialisation ----------------------------------------------------

# "desk" scales the full 256^3 / 360-view setup down by 4 per axis in the
# volume and detector and keeps the field of view (voxel 2 mm, pixel 4 mm).
PRESETS = {
    "full": {},
    "desk": dict(nu=64, nv=64, du=4.0, dv=4.0, num_views=120, nx=64, ny=64, nz=64, voxel_size=2.0),
}


def geometry_to_config(geom: ConeBeamGeometry) -> dict:
    """Flat ``[geometry]`` section for a circular scan (angles are implied)."""
    return {key: str(value) for key, value in geom.to_dict().items()}


def geometry_from_config(section: Mapping[str, str]) -> ConeBeamGeometry:
    """Build a circular geometry from a flat key/value mapping.

    An optional ``preset`` key (see :data:`PRESETS`) supplies the base
    values; other missing keys fall back to the :func:`make_circular`
    defaults. Unknown keys are rejected so typos do not silently pass.
    """
    section = dict(section)
    preset = section.pop("preset", None)
    if preset is not None and preset not in PRESETS:
        raise GeometryError(f"unknown geometry preset {preset!r}; known: {', '.join(PRESETS)}")
    known = set(_INT_FIELDS + _FLOAT_FIELDS)
    unknown = set(section) - known
    if unknown:
        raise GeometryError(f"unknown [geometry] keys: {sorted(unknown)}")
    kwargs = dict(PRESETS[preset]) if preset else {}
    for key, raw in section.items():
        try:
            kwargs[key] = int(raw) if key in _INT_FIELDS else float(raw)
        except (TypeError, ValueError):
            raise GeometryError(f"[geometry] {key} is not a number: {raw!r}") from None
    return make_circular(**kwargs)
