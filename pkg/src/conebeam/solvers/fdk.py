"""Feldkamp-Davis-Kress filtered backprojection for full circular scans."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import _kernels
from .._threads import configure_threads
from ..arrays import Sinogram, Volume, as_ndarray
from ..geometry import ConeBeamGeometry, detector_coordinates

WINDOWS = ("ramlak", "hann")


@dataclass(frozen=True)
class FdkConfig:
    window: str = "ramlak"
    pad_to: Optional[int] = None  # None: next power of two >= 2 * nu

    def __post_init__(self):
        if self.window not in WINDOWS:
            raise ValueError(f"unknown FDK window {self.window!r}; known: {WINDOWS}")
        if self.pad_to is not None and (int(self.pad_to) != self.pad_to or self.pad_to < 1):
            raise ValueError(f"pad_to must be a positive integer, got {self.pad_to}")

    def pad_length(self, nu: int) -> int:
        if self.pad_to is None:
            return 1 << math.ceil(math.log2(2 * nu))
        if self.pad_to < 2 * nu:
            raise ValueError(f"pad_to={self.pad_to} is shorter than 2 * nu = {2 * nu}")
        return int(self.pad_to)


def ramp_response(pad: int, window: str = "ramlak") -> np.ndarray:
    """Frequency response (``rfft`` layout) of the unit-pitch Ram-Lak filter.

    Built from the spatial kernel ``h[0] = 1/4``, ``h[n] = -1/(pi n)^2`` for
    odd ``n`` and 0 for even ``n``, so the zero-frequency term is not
    forced to zero as with a sampled ``|w|`` ramp.
    """
    n = np.arange(pad)
    n = np.where(n < pad // 2, n, n - pad)  # circular indices -pad/2 .. pad/2 - 1
    kernel = np.zeros(pad)
    kernel[n == 0] = 0.25
    odd = n % 2 == 1
    kernel[odd] = -1.0 / (math.pi * n[odd]) ** 2
    response = np.fft.rfft(kernel).real
    if window == "hann":
        freq = np.fft.rfftfreq(pad)
        response *= 0.5 * (1.0 + np.cos(2.0 * math.pi * freq))
    return response


def filter_projections(b: np.ndarray, geom: ConeBeamGeometry, cfg: FdkConfig) -> np.ndarray:
    """Cosine pre-weighting followed by row-wise ramp filtering."""
    u, v = detector_coordinates(geom)
    cosine = geom.sdd / np.sqrt(geom.sdd**2 + u[None, :] ** 2 + v[:, None] ** 2)
    weighted = b * cosine[None, :, :]
    pad = cfg.pad_length(geom.nu)
    spectrum = np.fft.rfft(weighted, n=pad, axis=-1) * ramp_response(pad, cfg.window)
    filtered = np.fft.irfft(spectrum, n=pad, axis=-1)[..., : geom.nu]
    # ramp integral on the virtual detector through the rotation axis
    pitch_at_axis = geom.du * geom.sod / geom.sdd
    return np.ascontiguousarray(filtered / pitch_at_axis)


def fdk(b, geom: ConeBeamGeometry, cfg: FdkConfig = FdkConfig(), dtype=None) -> Volume:
    """Reconstruct a volume from a full-turn circular cone-beam sinogram."""
    data = np.asarray(as_ndarray(b), dtype=np.float64)
    if data.shape != geom.sinogram_shape:
        raise ValueError(f"sinogram shape {data.shape} does not match geometry {geom.sinogram_shape}")
    if geom.num_views < 2:
        raise ValueError(f"FDK needs at least 2 views, got {geom.num_views}")
    filtered = filter_projections(data, geom, cfg)
    theta = geom.angles_array()
    out = np.zeros(geom.volume_shape, dtype=np.float64)
    configure_threads()
    _kernels.fdk_backproject(filtered, np.cos(theta), np.sin(theta), math.pi / geom.num_views,
                             geom.nx, geom.ny, geom.nz, geom.voxel_size, geom.sod, geom.sdd,
                             geom.nu, geom.nv, geom.du, geom.dv, out)
    if dtype is None:
        dtype = b.dtype if isinstance(b, Sinogram) else np.float32
    return Volume(out.astype(dtype), geom.voxel_size)
