"""Transmission-domain Poisson noise for simulated low/clinical dose scans."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import Sinogram, as_ndarray

DOSE_PRESETS = {"low": 1.0e4, "clinical": 1.0e6}
DEFAULT_COUNT_FLOOR = 0.5

# Elements are drawn in fixed-size blocks, each from its own Philox stream
# (counter offset = block index), so results never depend on worker order.
BLOCK = 1 << 16


@dataclass(frozen=True)
class DoseModel:
    i0: float
    count_floor: float = DEFAULT_COUNT_FLOOR
    seed: int = 0

    def __post_init__(self):
        if not self.i0 > 0:
            raise ValueError(f"i0 must be > 0, got {self.i0}")
        if not 0 < self.count_floor < self.i0:
            raise ValueError(f"count_floor must lie in (0, i0), got {self.count_floor}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @classmethod
    def preset(cls, name: str, seed: int = 0, count_floor: float = DEFAULT_COUNT_FLOOR):
        try:
            i0 = DOSE_PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown dose preset {name!r}; known: {sorted(DOSE_PRESETS)}") from None
        return cls(i0=i0, count_floor=count_floor, seed=seed)


def poisson_counts(expected: np.ndarray, seed: int) -> np.ndarray:
    """Poisson samples for a flat array of means, reproducible per (seed, index)."""
    flat = np.ravel(expected)
    counts = np.empty(flat.shape, dtype=np.float64)
    for block, start in enumerate(range(0, flat.size, BLOCK)):
        bitgen = np.random.Philox(key=int(seed), counter=[0, 0, block, 0])
        stop = min(start + BLOCK, flat.size)
        counts[start:stop] = np.random.Generator(bitgen).poisson(flat[start:stop])
    return counts.reshape(np.shape(expected))


def simulate_dose(clean, model: DoseModel, attenuation_scale: float = 1.0) -> Sinogram:
    """Noisy line integrals ``-ln(max(n, floor) / i0)`` with ``n ~ Poisson(i0 * exp(-p))``.

    ``attenuation_scale`` converts the stored line integrals into
    dimensionless attenuation (``p = scale * clean``) before sampling and
    back afterwards; with the default 1.0 the input is used as-is.
    """
    data = as_ndarray(clean)
    if np.any(data < 0):
        raise ValueError("clean sinogram has negative line integrals")
    if not attenuation_scale > 0:
        raise ValueError(f"attenuation_scale must be > 0, got {attenuation_scale}")
    p = data.astype(np.float64) * attenuation_scale
    counts = poisson_counts(model.i0 * np.exp(-p), model.seed)
    noisy = -np.log(np.maximum(counts, model.count_floor) / model.i0) / attenuation_scale
    if isinstance(clean, Sinogram):
        return Sinogram(noisy.astype(clean.dtype), clean.du, clean.dv, dict(clean.metadata))
    return Sinogram(noisy.astype(np.float32))
