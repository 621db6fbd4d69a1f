"""Least-squares reconstruction: Nesterov-accelerated gradient, plain gradient, SIRT.

All three minimise (or, for SIRT, drive down) ``f(x) = 0.5 * ||A x - b||^2``
from ``x0 = 0``. Iterates are kept in float64.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..arrays import Sinogram, Volume, as_ndarray
from ..projector import SystemOperator, operator_norm_sq

logger = logging.getLogger(__name__)

# power-iteration settings used when no Lipschitz constant is supplied
POWER_ITERS = 50
POWER_TOL = 1e-6
POWER_SEED = 0

SIRT_EPS = 1e-12


class SolverError(ArithmeticError):
    """A solver produced a non-finite iterate or was misconfigured."""


@dataclass(frozen=True)
class LsSolverConfig:
    max_iters: int = 100
    grad_tol: float = 0.0
    lipschitz: Optional[float] = None
    safety: float = 1.05
    nonneg: bool = False
    record_history: bool = True

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be an integer >= 1, got {self.max_iters}")
        if not self.grad_tol >= 0:
            raise ValueError(f"grad_tol must be >= 0, got {self.grad_tol}")
        if not self.safety >= 1:
            raise ValueError(f"safety must be >= 1, got {self.safety}")
        if self.lipschitz is not None and not self.lipschitz > 0:
            raise ValueError(f"lipschitz must be > 0, got {self.lipschitz}")


@dataclass
class SolverReport:
    iterations_run: int = 0
    objective_history: list = field(default_factory=list)
    final_grad_norm: float = math.nan
    terminated_by: str = "max_iters"
    lipschitz_used: float = math.nan

    def to_dict(self) -> dict:
        return {
            "iterations_run": self.iterations_run,
            "objective_history": list(self.objective_history),
            "final_grad_norm": self.final_grad_norm,
            "terminated_by": self.terminated_by,
            "lipschitz_used": self.lipschitz_used,
        }


def _objective(residual: np.ndarray) -> float:
    return 0.5 * float(np.vdot(residual, residual))


def _check_finite(x: np.ndarray, k: int, name: str):
    if not np.isfinite(x).all():
        raise SolverError(f"{name}: non-finite iterate at iteration {k}")


def _step_constant(op: SystemOperator, cfg: LsSolverConfig) -> float:
    if cfg.lipschitz is not None:
        lip = cfg.lipschitz
    else:
        lip, converged = operator_norm_sq(op, POWER_ITERS, POWER_TOL, POWER_SEED)
        if not converged:
            logger.warning("power iteration did not converge; using last estimate %.6g", lip)
    lip_hat = cfg.safety * lip
    if not lip_hat > 0:
        raise SolverError(f"step constant must be > 0, got {lip_hat}")
    return lip_hat


def _prepare(op: SystemOperator, b) -> np.ndarray:
    data = np.asarray(as_ndarray(b), dtype=np.float64)
    if data.shape != op.range_shape:
        raise ValueError(f"sinogram shape {data.shape} does not match geometry {op.range_shape}")
    return data


def _wrap(op: SystemOperator, x: np.ndarray, b, dtype=None) -> Volume:
    if dtype is None:
        dtype = b.dtype if isinstance(b, Sinogram) else np.float32
    return Volume(x.astype(dtype), op.geom.voxel_size)


def _accelerated(op, b, cfg, momentum, name, dtype=None):
    data = _prepare(op, b)
    lip_hat = _step_constant(op, cfg)
    ref = float(np.linalg.norm(op.adjoint(data)))

    x = np.zeros(op.domain_shape)
    y = x
    ax = np.zeros(op.range_shape)  # A x_k, tracked by linearity
    ay = ax
    t = 1.0
    report = SolverReport(lipschitz_used=lip_hat)
    if cfg.record_history:
        report.objective_history.append(_objective(ax - data))

    for k in range(cfg.max_iters):
        grad = op.adjoint(ay - data)
        gnorm = float(np.linalg.norm(grad))
        x_new = y - grad / lip_hat
        if cfg.nonneg:
            np.maximum(x_new, 0.0, out=x_new)
        _check_finite(x_new, k + 1, name)
        ax_new = op.forward(x_new)
        if momentum:
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_new
            y = x_new + beta * (x_new - x)
            ay = ax_new + beta * (ax_new - ax)
            t = t_new
        else:
            y, ay = x_new, ax_new
        x, ax = x_new, ax_new
        report.iterations_run = k + 1
        report.final_grad_norm = gnorm
        if cfg.record_history:
            report.objective_history.append(_objective(ax - data))
        if gnorm <= cfg.grad_tol * ref:
            report.terminated_by = "grad_tol"
            break
    return _wrap(op, x, b, dtype), report


def nag_ls(op: SystemOperator, b, cfg: LsSolverConfig = LsSolverConfig(), dtype=None):
    """Nesterov accelerated gradient on ``0.5 * ||A x - b||^2``.

    Uses step ``1 / L_hat`` with ``L_hat = safety * L`` and the momentum
    sequence ``t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2``, which gives
    ``f(x_k) - f* <= 2 L_hat ||x_0 - x*||^2 / (k + 1)^2``. Stops once the
    gradient at the extrapolated point satisfies
    ``||g|| <= grad_tol * ||A^T b||`` or after ``max_iters`` steps.

    Returns ``(volume, report)``.
    """
    return _accelerated(op, b, cfg, momentum=True, name="nag_ls", dtype=dtype)


def gd_ls(op: SystemOperator, b, cfg: LsSolverConfig = LsSolverConfig(), dtype=None):
    """Gradient descent with fixed step ``1 / L_hat``; same contract as :func:`nag_ls`."""
    return _accelerated(op, b, cfg, momentum=False, name="gd_ls", dtype=dtype)


def _safe_reciprocal(v: np.ndarray) -> np.ndarray:
    out = np.zeros_like(v)
    mask = v > SIRT_EPS
    out[mask] = 1.0 / v[mask]
    return out


def sirt_weights(op: SystemOperator):
    """``(R, C)``: reciprocal row sums and column sums of ``A``, zero where a sum is ~0."""
    row_w = _safe_reciprocal(op.forward(np.ones(op.domain_shape)))
    col_w = _safe_reciprocal(op.adjoint(np.ones(op.range_shape)))
    return row_w, col_w


def sirt(op: SystemOperator, b, cfg: LsSolverConfig = LsSolverConfig(max_iters=200), dtype=None,
         weights=None):
    """SIRT: ``x <- x + C A^T R (b - A x)`` with inverse row/column sums.

    Stops when ``||b - A x|| <= grad_tol * ||b||`` or after ``max_iters``;
    the report's ``final_grad_norm`` holds the residual norm. ``lipschitz``
    and ``safety`` are ignored and ``nonneg`` clamps each iterate.
    ``weights`` may carry a precomputed :func:`sirt_weights` pair.
    """
    data = _prepare(op, b)
    row_w, col_w = weights if weights is not None else sirt_weights(op)
    ref = float(np.linalg.norm(data))

    x = np.zeros(op.domain_shape)
    residual = data.copy()
    report = SolverReport()
    if cfg.record_history:
        report.objective_history.append(_objective(residual))
    for k in range(cfg.max_iters):
        x = x + col_w * op.adjoint(row_w * residual)
        if cfg.nonneg:
            np.maximum(x, 0.0, out=x)
        _check_finite(x, k + 1, "sirt")
        residual = data - op.forward(x)
        rnorm = float(np.linalg.norm(residual))
        report.iterations_run = k + 1
        report.final_grad_norm = rnorm
        if cfg.record_history:
            report.objective_history.append(0.5 * rnorm * rnorm)
        if rnorm <= cfg.grad_tol * ref:
            report.terminated_by = "grad_tol"
            break
    return _wrap(op, x, b, dtype), report
