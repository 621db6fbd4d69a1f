"""Volume and sinogram containers, the ``.ctarr`` file format, and metrics.

Array memory order follows the on-disk layout: a volume is stored as a numpy
array of shape ``(nz, ny, nx)`` (x fastest) and a sinogram as
``(num_views, nv, nu)`` (u fastest), both C-contiguous.

A ``.ctarr`` file is::

    b"CTARR\\0\\0\\0" | uint64 LE header length | UTF-8 JSON header | raw LE payload
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

MAGIC = b"CTARR\x00\x00\x00"
_LEN = struct.Struct("<Q")
_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}
LAYOUTS = {"volume": "x,y,z", "sinogram": "u,v,view"}


class FormatError(ValueError):
    """Malformed or inconsistent ``.ctarr`` file."""


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is None:
        dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
    arr = np.ascontiguousarray(arr, dtype=dtype)
    if arr.ndim != 3:
        raise ValueError(f"expected a 3-D array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("array contains non-finite values")
    view = arr.view()
    view.setflags(write=False)
    return view


@dataclass(frozen=True, eq=False)
class Volume:
    """Scalar field on a regular voxel grid; ``data`` has shape ``(nz, ny, nx)``."""

    data: np.ndarray
    voxel_size: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "data", _as_float_array(self.data))
        if not self.voxel_size > 0:
            raise ValueError(f"voxel_size must be > 0, got {self.voxel_size}")
        object.__setattr__(self, "voxel_size", float(self.voxel_size))

    @property
    def nx(self) -> int:
        return self.data.shape[2]

    @property
    def ny(self) -> int:
        return self.data.shape[1]

    @property
    def nz(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def astype(self, dtype) -> "Volume":
        return Volume(self.data.astype(dtype), self.voxel_size, dict(self.metadata))

    def header(self) -> dict:
        return {
            "kind": "volume",
            "dims": [self.nx, self.ny, self.nz],
            "layout": LAYOUTS["volume"],
            "voxel_size": self.voxel_size,
        }


@dataclass(frozen=True, eq=False)
class Sinogram:
    """Stack of detector readings; ``data`` has shape ``(num_views, nv, nu)``."""

    data: np.ndarray
    du: float = 1.0
    dv: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "data", _as_float_array(self.data))
        for name in ("du", "dv"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be > 0, got {value}")
            object.__setattr__(self, name, float(value))

    @property
    def num_views(self) -> int:
        return self.data.shape[0]

    @property
    def nv(self) -> int:
        return self.data.shape[1]

    @property
    def nu(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def astype(self, dtype) -> "Sinogram":
        return Sinogram(self.data.astype(dtype), self.du, self.dv, dict(self.metadata))

    def header(self) -> dict:
        return {
            "kind": "sinogram",
            "dims": [self.nu, self.nv, self.num_views],
            "layout": LAYOUTS["sinogram"],
            "pixel_size": [self.du, self.dv],
        }


ArrayLike = Union[Volume, Sinogram, np.ndarray]


def as_ndarray(a) -> np.ndarray:
    """The underlying numpy array of a container (or the array itself)."""
    return a.data if isinstance(a, (Volume, Sinogram)) else np.asarray(a)


# -- file format ---------------------------------------------------------------

def write_array(path, array: ArrayLike, metadata: Optional[dict] = None) -> None:
    """Write a volume, sinogram or bare 3-D array to a ``.ctarr`` file.

    For a bare ndarray, ``metadata`` must at least name ``kind``. Extra
    metadata keys are stored in the header verbatim.
    """
    if isinstance(array, (Volume, Sinogram)):
        header = array.header()
        header.update(array.metadata)
        data = array.data
    else:
        data = np.asarray(array)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float32)
        header = {}
    if metadata:
        header.update(metadata)
    kind = header.get("kind")
    if kind not in LAYOUTS:
        raise FormatError(f"metadata kind must be one of {sorted(LAYOUTS)}, got {kind!r}")
    if data.ndim != 3:
        raise FormatError(f"expected a 3-D array, got shape {data.shape}")
    if not np.isfinite(data).all():
        raise ValueError("refusing to write non-finite values")
    header["dims"] = [int(n) for n in data.shape[::-1]]
    header["layout"] = LAYOUTS[kind]
    header["dtype"] = data.dtype.name
    header["byte_order"] = "little"

    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(data, dtype=_DTYPES[data.dtype.name]).tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(raw)))
        fh.write(raw)
        fh.write(payload)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        header, _ = _read_header(fh, path)
    return header


def _read_header(fh, path):
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise FormatError(f"{path}: not a .ctarr file (bad magic {magic!r})")
    size_bytes = fh.read(_LEN.size)
    if len(size_bytes) != _LEN.size:
        raise FormatError(f"{path}: truncated header length")
    (size,) = _LEN.unpack(size_bytes)
    raw = fh.read(size)
    if len(raw) != size:
        raise FormatError(f"{path}: header truncated ({len(raw)} of {size} bytes)")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: header is not valid JSON: {exc}") from None
    for key in ("kind", "dims", "layout", "dtype"):
        if key not in header:
            raise FormatError(f"{path}: header missing {key!r}")
    if header["dtype"] not in _DTYPES:
        raise FormatError(f"{path}: unsupported dtype {header['dtype']!r}")
    if header["kind"] not in LAYOUTS or header["layout"] != LAYOUTS[header["kind"]]:
        raise FormatError(f"{path}: unsupported kind/layout {header['kind']!r}/{header['layout']!r}")
    return header, len(MAGIC) + _LEN.size + size


def read_array(path):
    """Read a ``.ctarr`` file; returns ``(array, header)``.

    The array has shape ``dims`` reversed (slowest axis first) and the
    native dtype named in the header.
    """
    with open(path, "rb") as fh:
        header, _ = _read_header(fh, path)
        payload = fh.read()
    dims = [int(n) for n in header["dims"]]
    dtype = _DTYPES[header["dtype"]]
    expected = math.prod(dims) * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload size mismatch: header dims {dims} ({header['dtype']}) "
            f"require {expected} bytes, found {len(payload)}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(dims[::-1]).astype(dtype.newbyteorder("="))
    return data, header


def load(path) -> Union[Volume, Sinogram]:
    """Read a ``.ctarr`` file into a :class:`Volume` or :class:`Sinogram`."""
    data, header = read_array(path)
    extra = {k: v for k, v in header.items()
             if k not in ("kind", "dims", "layout", "dtype", "byte_order", "voxel_size", "pixel_size")}
    if header["kind"] == "volume":
        return Volume(data, header.get("voxel_size", 1.0), extra)
    du, dv = header.get("pixel_size", [1.0, 1.0])
    return Sinogram(data, du, dv, extra)


# -- metrics -------------------------------------------------------------------

def mse(a: ArrayLike, b: ArrayLike) -> float:
    """Mean squared difference, accumulated in float64."""
    x, y = as_ndarray(a), as_ndarray(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    diff = x.astype(np.float64) - y.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(a: ArrayLike, b: ArrayLike, peak: float) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the arrays are equal."""
    if not peak > 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)
