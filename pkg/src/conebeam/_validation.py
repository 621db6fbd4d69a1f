"""Input checks shared by the estimators (3-D arrays, not sklearn's 2-D X)."""
import numbers

import numpy as np

from .arrays import Sinogram, Volume, as_ndarray


def check_array3d(a, expected_shape=None, name="array") -> np.ndarray:
    """Return ``a`` as a finite float 3-D ndarray, optionally of a fixed shape."""
    data = as_ndarray(a)
    if data.ndim != 3:
        raise ValueError(f"{name} must be 3-D, got shape {data.shape}")
    if expected_shape is not None and tuple(data.shape) != tuple(expected_shape):
        raise ValueError(f"{name} shape {data.shape} does not match expected {tuple(expected_shape)}")
    if data.dtype.kind != "f":
        data = data.astype(np.float32)
    if not np.isfinite(data).all():
        raise ValueError(f"{name} contains non-finite values")
    return data


def rewrap(template, data: np.ndarray):
    """Give ``data`` the container type of ``template`` (Volume, Sinogram or ndarray)."""
    if isinstance(template, Volume):
        return Volume(data.astype(template.dtype, copy=False), template.voxel_size, dict(template.metadata))
    if isinstance(template, Sinogram):
        return Sinogram(data.astype(template.dtype, copy=False), template.du, template.dv,
                        dict(template.metadata))
    return data


def check_positive(value, name, integer=False, minimum=0, inclusive=False):
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind):
        raise ValueError(f"{name} must be {'an integer' if integer else 'a number'}, got {value!r}")
    ok = value >= minimum if inclusive else value > minimum
    if not ok:
        raise ValueError(f"{name} must be {'>=' if inclusive else '>'} {minimum}, got {value!r}")
    return value
