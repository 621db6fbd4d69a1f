"""SEM -> reconstruction -> IEM orchestration with per-stage timing and error attribution."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import Pipeline
from sklearn.utils.validation import check_is_fitted

from .arrays import Sinogram, Volume, load, mse, write_array
from .config import PipelineConfig
from .noise import simulate_dose
from .phantoms import analytic_sphere_sinogram, shepp_logan_3d, shepp_logan_sinogram, sphere_phantom
from .projector import SystemOperator, forward_project
from .solvers import make_reconstructor

STAGES = ("sem", "recon", "iem")
NORMALIZATION = "raw attenuation values (phantom units), no windowing"


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class StageRecord:
    name: str
    wall_time: float
    mse: Optional[float] = None
    detail: dict = field(default_factory=dict)


@dataclass
class RunReport:
    method: str
    stages: list
    dose: Optional[dict] = None
    inputs: dict = field(default_factory=dict)
    normalization: str = NORMALIZATION

    @property
    def final_mse(self) -> Optional[float]:
        return self.stages[-1].mse

    def to_dict(self) -> dict:
        return asdict(self)


def build_pipeline(cfg: PipelineConfig, reconstructor=None) -> Pipeline:
    """The three stages as an sklearn :class:`~sklearn.pipeline.Pipeline`.

    A fitted ``reconstructor`` may be supplied to reuse its preparation
    (e.g. the Lipschitz estimate) across runs.
    """
    if reconstructor is None:
        reconstructor = make_reconstructor(cfg.method, cfg.geometry, **cfg.solver_options())
    return Pipeline([("sem", cfg.sem), ("recon", reconstructor), ("iem", cfg.iem)])


def phantom_volume(cfg: PipelineConfig) -> Volume:
    g, spec = cfg.geometry, cfg.phantom
    if spec.kind == "sphere":
        return sphere_phantom(spec.center, spec.radius, spec.value, g.nx, g.ny, g.nz, g.voxel_size)
    return shepp_logan_3d(g.nx, g.ny, g.nz, g.voxel_size)


def clean_sinogram(cfg: PipelineConfig, truth: Volume) -> Sinogram:
    """Noiseless data: the discrete projector applied to ``truth``, or exact line integrals."""
    g, spec = cfg.geometry, cfg.phantom
    if cfg.clean_source == "projector":
        return forward_project(SystemOperator(g), truth)
    if spec.kind == "sphere":
        data = analytic_sphere_sinogram(g, spec.center, spec.radius, spec.value)
    else:
        data = shepp_logan_sinogram(g)
    return Sinogram(data.data.astype(np.float32), data.du, data.dv)


def synthesize(cfg: PipelineConfig, truth: Optional[Volume] = None, clean: Optional[Sinogram] = None):
    """``(truth, clean, measured)`` for a synthetic run; ``measured`` is ``clean`` when noiseless."""
    truth = phantom_volume(cfg) if truth is None else truth
    clean = clean_sinogram(cfg, truth) if clean is None else clean
    measured = clean if cfg.dose is None else simulate_dose(clean, cfg.dose, cfg.attenuation_scale)
    return truth, clean, measured


def _load_input(path, expected_kind):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    obj = load(path)
    kind = "sinogram" if isinstance(obj, Sinogram) else "volume"
    if kind != expected_kind:
        raise ValueError(f"{path} holds a {kind}, expected a {expected_kind}")
    return obj


def _expected_shape(cfg, name):
    return cfg.geometry.sinogram_shape if name == "sem" else cfg.geometry.volume_shape


def run_pipeline(cfg: PipelineConfig, sinogram=None, truth=None, clean=None, reconstructor=None):
    """Run SEM, reconstruction and IEM in order; return ``(volume, RunReport)``.

    The input sinogram is ``sinogram``, else ``cfg.input_path``, else a
    synthetic acquisition of ``cfg.phantom``. Ground truth (``truth`` or
    ``cfg.truth_path``, or the phantom for synthetic runs) turns on per-stage
    MSE; the SEM stage is scored against the clean sinogram when known.
    """
    inputs = {}
    if sinogram is None and cfg.input_path is not None:
        sinogram = _load_input(cfg.input_path, "sinogram")
        inputs["sinogram"] = str(cfg.input_path)
    if truth is None and cfg.truth_path is not None:
        truth = _load_input(cfg.truth_path, "volume")
        inputs["truth"] = str(cfg.truth_path)
    if sinogram is None:
        truth, clean, sinogram = synthesize(cfg, truth, clean)
        inputs["sinogram"] = f"synthetic {cfg.phantom.kind} ({cfg.clean_source} data)"
    if tuple(np.shape(sinogram)) != cfg.geometry.sinogram_shape:
        raise StageError("input", ValueError(
            f"sinogram shape {tuple(np.shape(sinogram))} does not match the geometry "
            f"{cfg.geometry.sinogram_shape}"))
    if not cfg.evaluate:
        truth = clean = None

    pipe = build_pipeline(cfg, reconstructor)
    records = []
    x = sinogram
    out_dir = Path(cfg.intermediates_dir) if cfg.intermediates_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    for name, step in pipe.steps:
        start = time.perf_counter()
        try:
            if name != "recon" or not _is_fitted(step):
                step.fit(x)
            x = step.transform(x)
        except Exception as exc:
            raise StageError(name, exc) from exc
        elapsed = time.perf_counter() - start
        if tuple(np.shape(x)) != _expected_shape(cfg, name):
            raise StageError(name, ValueError(
                f"output shape {tuple(np.shape(x))}, expected {_expected_shape(cfg, name)}"))
        reference = clean if name == "sem" else truth
        record = StageRecord(name, elapsed, None if reference is None else mse(x, reference))
        if name == "recon":
            report = getattr(step, "report_", None)
            record.detail = {"method": cfg.method, **(report.to_dict() if report is not None else {})}
        else:
            record.detail = step.describe()
        records.append(record)
        if out_dir is not None:
            kind = "sinogram" if name == "sem" else "volume"
            write_array(out_dir / f"{name}.ctarr", x, {"stage": name, "kind": kind})

    volume = x if isinstance(x, Volume) else Volume(x, cfg.geometry.voxel_size)
    dose = None if cfg.dose is None else {
        "i0": cfg.dose.i0, "seed": cfg.dose.seed, "count_floor": cfg.dose.count_floor,
        "attenuation_scale": cfg.attenuation_scale}
    report = RunReport(cfg.method, records, dose, inputs)
    if cfg.output_path is not None:
        write_outputs(cfg.output_path, volume, report)
    return volume, report


def _is_fitted(estimator) -> bool:
    try:
        check_is_fitted(estimator)
    except NotFittedError:
        return False
    return True


def report_path(output_path) -> Path:
    return Path(output_path).with_suffix(".json")


def write_outputs(output_path, volume: Volume, report: RunReport) -> None:
    """The final volume as ``.ctarr`` and the report as JSON beside it."""
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    write_array(output_path, volume, {"method": report.method})
    report_path(output_path).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
