"""Shape-preserving sinogram/image enhancement stages (SEM and IEM).

The stages are sklearn transformers so a learned model with the same
``fit``/``transform`` surface can replace the classical filters here.
Slicing always runs over the leading array axis: views for sinograms,
z-slices for volumes.
"""
from __future__ import annotations

from typing import Mapping

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from ._kernels import chambolle_tv
from ._validation import check_array3d, check_positive, rewrap

KINDS = ("identity", "gaussian", "median", "tv")
SLICINGS = {"sinogram": ("per_view", "volumetric"), "image": ("per_z_slice", "volumetric")}
DEFAULT_SLICING = {"sinogram": "per_view", "image": "per_z_slice"}


def tv_denoise(f: np.ndarray, weight: float, n_iter: int, axes) -> np.ndarray:
    """ROF denoising ``min_u 0.5 ||u - f||^2 + weight * TV(u)`` by Chambolle's projection.

    The total variation is taken over ``axes`` only, so passing the two
    in-plane axes treats every leading slice independently. Forward
    differences with Neumann boundaries; ``div`` is the exact negative
    adjoint, so the mean of ``f`` is preserved. 3-D input over the in-plane
    or all axes runs in a compiled kernel; anything else in NumPy.
    """
    f = np.asarray(f, dtype=np.float64)
    axes = tuple(sorted(a % f.ndim for a in axes))
    tau = 1.0 / (4.0 * len(axes))
    if f.ndim == 3 and axes in ((1, 2), (0, 1, 2)):
        out = np.empty_like(f)
        chambolle_tv(np.ascontiguousarray(f), float(weight), int(n_iter), tau, len(axes) == 3, out)
        return out
    return _tv_denoise_numpy(f, weight, n_iter, axes, tau)


def _tv_denoise_numpy(f, weight, n_iter, axes, tau):
    p = [np.zeros_like(f) for _ in axes]
    g = [np.zeros_like(f) for _ in axes]
    d = np.zeros_like(f)
    norm = np.empty_like(f)
    for _ in range(n_iter):
        _div(p, axes, out=d)
        d -= f / weight
        _grad(d, axes, out=g)
        np.multiply(g[0], g[0], out=norm)
        for gi in g[1:]:
            norm += gi * gi
        np.sqrt(norm, out=norm)
        norm *= tau
        norm += 1.0
        for pi, gi in zip(p, g):
            gi *= tau
            pi += gi
            pi /= norm
    return f - weight * _div(p, axes, out=d)


def _axis_slices(ndim, ax):
    lo = [slice(None)] * ndim
    hi = [slice(None)] * ndim
    lo[ax] = slice(0, -1)
    hi[ax] = slice(1, None)
    return tuple(lo), tuple(hi)


def _grad(u, axes, out):
    for g, ax in zip(out, axes):
        lo, hi = _axis_slices(u.ndim, ax)
        np.subtract(u[hi], u[lo], out=g[lo])
        last = [slice(None)] * u.ndim
        last[ax] = -1
        g[tuple(last)] = 0.0
    return out


def _div(p, axes, out):
    # p is zero on the last row of its own axis (the gradient is), so this
    # backward difference is exactly the negative adjoint of _grad
    out[...] = 0.0
    for pi, ax in zip(p, axes):
        lo, hi = _axis_slices(pi.ndim, ax)
        out += pi
        out[hi] -= pi[lo]
    return out


class Enhancer(TransformerMixin, BaseEstimator):
    """A classical denoiser with kind-specific parameters.

    Parameters
    ----------
    kind : {"identity", "gaussian", "median", "tv"}
    sigma : float
        Gaussian standard deviation in array elements.
    radius : int
        Median half-window; the window is ``2 * radius + 1`` wide.
    weight : float
        TV regularisation weight (lambda).
    n_iter : int
        Chambolle iterations for TV.
    """

    def __init__(self, kind="identity", sigma=1.0, radius=1, weight=0.1, n_iter=50):
        self.kind = kind
        self.sigma = sigma
        self.radius = radius
        self.weight = weight
        self.n_iter = n_iter

    def validate(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown enhancer kind {self.kind!r}; known kinds: {', '.join(KINDS)}")
        if self.kind == "gaussian":
            check_positive(self.sigma, "sigma")
        elif self.kind == "median":
            check_positive(self.radius, "radius", integer=True, minimum=1, inclusive=True)
        elif self.kind == "tv":
            check_positive(self.weight, "weight (lambda)")
            check_positive(self.n_iter, "n_iter", integer=True, minimum=1, inclusive=True)
        return self

    def active_params(self) -> dict:
        return {
            "identity": {},
            "gaussian": {"sigma": self.sigma},
            "median": {"radius": self.radius},
            "tv": {"weight": self.weight, "n_iter": self.n_iter},
        }[self.kind]

    def fit(self, X=None, y=None):
        return self.validate()

    def apply(self, data: np.ndarray, axes) -> np.ndarray:
        """Filter ``data`` along ``axes`` only (other axes are independent slices)."""
        self.validate()
        if self.kind == "identity":
            return data
        axes = tuple(axes)
        if self.kind == "gaussian":
            sigma = [self.sigma if ax in axes else 0.0 for ax in range(data.ndim)]
            out = ndimage.gaussian_filter(data.astype(np.float64), sigma, mode="reflect")
        elif self.kind == "median":
            size = [2 * self.radius + 1 if ax in axes else 1 for ax in range(data.ndim)]
            out = ndimage.median_filter(data, size=size, mode="reflect")
        else:
            out = tv_denoise(data, self.weight, self.n_iter, axes)
        return out.astype(data.dtype, copy=False)

    def transform(self, X):
        data = check_array3d(X)
        return rewrap(X, self.apply(data, (0, 1, 2)))


class EnhancementStage(TransformerMixin, BaseEstimator):
    """An enhancer bound to a data domain and a slicing mode."""

    def __init__(self, domain="sinogram", enhancer=None, slicing=None):
        self.domain = domain
        self.enhancer = enhancer
        self.slicing = slicing

    def _resolved(self):
        if self.domain not in SLICINGS:
            raise ValueError(f"unknown domain {self.domain!r}; known: {sorted(SLICINGS)}")
        slicing = self.slicing or DEFAULT_SLICING[self.domain]
        if slicing not in SLICINGS[self.domain]:
            raise ValueError(
                f"{self.domain} stages slice {' or '.join(SLICINGS[self.domain])}, got {slicing!r}"
            )
        enhancer = self.enhancer if self.enhancer is not None else Enhancer()
        enhancer.validate()
        return enhancer, slicing

    @property
    def is_identity(self) -> bool:
        return self.enhancer is None or self.enhancer.kind == "identity"

    def describe(self) -> dict:
        enhancer, slicing = self._resolved()
        return {"domain": self.domain, "slicing": slicing, "kind": enhancer.kind,
                **enhancer.active_params()}

    def fit(self, X=None, y=None):
        self._resolved()
        return self

    def transform(self, X):
        return enhance(self, X)


def enhance(stage: EnhancementStage, a):
    """Apply ``stage`` to a 3-D array (or Volume/Sinogram); output has the input's shape and type."""
    enhancer, slicing = stage._resolved()
    data = check_array3d(a, name=f"{stage.domain} input")
    if enhancer.kind == "identity":
        return a
    axes = (0, 1, 2) if slicing == "volumetric" else (1, 2)
    return rewrap(a, enhancer.apply(data, axes))


def load_enhancer(section: Mapping, domain: str = None) -> EnhancementStage:
    """Build a validated stage from a flat config section.

    Recognised keys: ``kind``, ``domain``, ``slicing``, ``sigma``, ``radius``,
    ``lambda`` (or ``weight``), ``iterations`` (or ``n_iter``).
    """
    section = dict(section)
    kind = section.pop("kind", "identity")
    if kind not in KINDS:
        raise ValueError(f"unknown enhancer kind {kind!r}; known kinds: {', '.join(KINDS)}")
    domain = section.pop("domain", domain)
    if domain is None:
        raise ValueError("enhancement stage needs a domain (sinogram or image)")
    slicing = section.pop("slicing", None)
    params = {}
    converters = {"sigma": ("sigma", float), "radius": ("radius", int),
                  "lambda": ("weight", float), "weight": ("weight", float),
                  "iterations": ("n_iter", int), "n_iter": ("n_iter", int)}
    for key, raw in section.items():
        if key not in converters:
            raise ValueError(f"unknown enhancer parameter {key!r}")
        name, conv = converters[key]
        try:
            params[name] = conv(raw)
        except (TypeError, ValueError):
            raise ValueError(f"enhancer parameter {key} is not a valid number: {raw!r}") from None
    stage = EnhancementStage(domain=domain, enhancer=Enhancer(kind=kind, **params), slicing=slicing)
    stage.fit()
    return stage


def default_sem() -> EnhancementStage:
    return EnhancementStage("sinogram", Enhancer("gaussian", sigma=1.0), "per_view")


def default_iem() -> EnhancementStage:
    return EnhancementStage("image", Enhancer("tv", weight=0.1, n_iter=50), "per_z_slice")


TUNING_GRID = (
    ("gaussian", "sigma", (0.3, 0.4, 0.5, 0.75, 1.0)),
    ("median", "radius", (1,)),
    ("tv", "weight", (0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0)),
)


def candidate_stages(domain: str, grid=TUNING_GRID) -> list:
    """Identity followed by every ``(kind, parameter value, slicing)`` combination in ``grid``."""
    if domain not in SLICINGS:
        raise ValueError(f"unknown domain {domain!r}; known: {sorted(SLICINGS)}")
    stages = [EnhancementStage(domain, Enhancer("identity"))]
    for slicing in SLICINGS[domain]:
        for kind, param, values in grid:
            stages += [EnhancementStage(domain, Enhancer(kind, **{param: v}), slicing) for v in values]
    return stages


def select_stage(candidates, inputs, targets):
    """Pick the candidate with the lowest mean squared error of ``stage(input)`` against ``target``.

    This is the classical stand-in for training an enhancer with an MSE
    loss. Ties keep the earlier candidate. Returns the winning stage and the
    ``(description, mse)`` score of every candidate in order.
    """
    inputs, targets = list(inputs), list(targets)
    if not inputs or len(inputs) != len(targets):
        raise ValueError("select_stage needs matching, non-empty input and target lists")
    scores = []
    best, best_mse = None, np.inf
    for stage in candidates:
        err = float(np.mean([
            np.mean((check_array3d(enhance(stage, x)).astype(np.float64)
                     - check_array3d(y).astype(np.float64)) ** 2)
            for x, y in zip(inputs, targets)
        ]))
        scores.append((stage.describe(), err))
        if err < best_mse:
            best, best_mse = stage, err
    return best, scores
