"""Reconstruction algorithms as sklearn transformers (sinogram in, volume out).

``fit`` does the per-geometry preparation that can be shared across many
sinograms (the Lipschitz constant for the gradient methods, the SIRT
weights); ``transform`` reconstructs. A :class:`~conebeam.arrays.Sinogram`
input yields a :class:`~conebeam.arrays.Volume`, a bare array yields an
array.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_array3d
from ..arrays import Sinogram, Volume
from ..geometry import ConeBeamGeometry
from ..projector import SystemOperator, operator_norm_sq
from . import iterative
from .fdk import FdkConfig, fdk
from .iterative import LsSolverConfig, gd_ls, nag_ls, sirt, sirt_weights


def _check_geometry(geometry):
    if not isinstance(geometry, ConeBeamGeometry):
        raise TypeError(f"geometry must be a ConeBeamGeometry, got {type(geometry).__name__}")
    return geometry


def _output(X, volume: Volume):
    return volume if isinstance(X, Sinogram) else volume.data


class _GradientReconstructor(TransformerMixin, BaseEstimator):
    _solver = None

    def __init__(self, geometry=None, max_iters=100, grad_tol=0.0, lipschitz=None,
                 safety=1.05, nonneg=False, record_history=True):
        self.geometry = geometry
        self.max_iters = max_iters
        self.grad_tol = grad_tol
        self.lipschitz = lipschitz
        self.safety = safety
        self.nonneg = nonneg
        self.record_history = record_history

    def fit(self, X=None, y=None):
        geom = _check_geometry(self.geometry)
        if X is not None:
            check_array3d(X, geom.sinogram_shape, "sinogram")
        self.operator_ = SystemOperator(geom)
        if self.lipschitz is not None:
            self.lipschitz_ = float(self.lipschitz)
            self.lipschitz_converged_ = True
        else:
            self.lipschitz_, self.lipschitz_converged_ = operator_norm_sq(
                self.operator_, iterative.POWER_ITERS, iterative.POWER_TOL, iterative.POWER_SEED
            )
        return self

    def solver_config(self) -> LsSolverConfig:
        return LsSolverConfig(
            max_iters=self.max_iters, grad_tol=self.grad_tol,
            lipschitz=getattr(self, "lipschitz_", self.lipschitz), safety=self.safety,
            nonneg=self.nonneg, record_history=self.record_history,
        )

    def transform(self, X):
        check_is_fitted(self, "lipschitz_")
        data = check_array3d(X, self.operator_.range_shape, "sinogram")
        solve = type(self)._solver
        volume, self.report_ = solve(self.operator_, X if isinstance(X, Sinogram) else data,
                                     self.solver_config())
        return _output(X, volume)


class NagReconstructor(_GradientReconstructor):
    """Nesterov-accelerated least squares (see :func:`~conebeam.solvers.nag_ls`)."""

    _solver = staticmethod(nag_ls)


class GdReconstructor(_GradientReconstructor):
    """Fixed-step gradient descent on the least-squares objective."""

    _solver = staticmethod(gd_ls)


class SirtReconstructor(TransformerMixin, BaseEstimator):
    def __init__(self, geometry=None, max_iters=200, grad_tol=0.0, nonneg=False, record_history=True):
        self.geometry = geometry
        self.max_iters = max_iters
        self.grad_tol = grad_tol
        self.nonneg = nonneg
        self.record_history = record_history

    def fit(self, X=None, y=None):
        geom = _check_geometry(self.geometry)
        if X is not None:
            check_array3d(X, geom.sinogram_shape, "sinogram")
        self.operator_ = SystemOperator(geom)
        self.weights_ = sirt_weights(self.operator_)
        return self

    def solver_config(self) -> LsSolverConfig:
        return LsSolverConfig(max_iters=self.max_iters, grad_tol=self.grad_tol,
                              nonneg=self.nonneg, record_history=self.record_history)

    def transform(self, X):
        check_is_fitted(self, "weights_")
        data = check_array3d(X, self.operator_.range_shape, "sinogram")
        volume, self.report_ = sirt(self.operator_, X if isinstance(X, Sinogram) else data,
                                    self.solver_config(), weights=self.weights_)
        return _output(X, volume)


class FdkReconstructor(TransformerMixin, BaseEstimator):
    def __init__(self, geometry=None, window="ramlak", pad_to=None):
        self.geometry = geometry
        self.window = window
        self.pad_to = pad_to

    def fit(self, X=None, y=None):
        geom = _check_geometry(self.geometry)
        if X is not None:
            check_array3d(X, geom.sinogram_shape, "sinogram")
        self.config_ = FdkConfig(self.window, self.pad_to)
        self.config_.pad_length(geom.nu)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        data = check_array3d(X, self.geometry.sinogram_shape, "sinogram")
        volume = fdk(X if isinstance(X, Sinogram) else data, self.geometry, self.config_)
        self.report_ = None
        return _output(X, volume)


RECONSTRUCTORS = {
    "fdk": FdkReconstructor,
    "sirt": SirtReconstructor,
    "gd": GdReconstructor,
    "nag": NagReconstructor,
}


def make_reconstructor(method: str, geometry: ConeBeamGeometry, **options):
    """Instantiate the estimator for ``method`` (one of :data:`RECONSTRUCTORS`)."""
    try:
        cls = RECONSTRUCTORS[method]
    except KeyError:
        raise ValueError(
            f"unknown reconstruction method {method!r}; valid methods: {', '.join(RECONSTRUCTORS)}"
        ) from None
    return cls(geometry=geometry, **options)
