"""Method x dose x seed sweeps against a known ground truth.

A method label is a reconstruction method optionally followed by ``+sem``
and/or ``+iem``, e.g. ``nag+sem+iem``. Variants sharing a base method and a
SEM setting reuse the same reconstruction, so ``nag+sem`` and
``nag+sem+iem`` cost one solve per cell.

With ``tune_enhancers`` on, the SEM and IEM stages are chosen per dose by
:func:`~conebeam.enhance.select_stage` on training acquisitions of
perturbed Shepp-Logan phantoms with noise seeds disjoint from the sweep's.
SEM is scored against the clean training sinogram, IEM against the
training phantom after the base reconstruction.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .arrays import Sinogram, Volume, mse
from .config import ConfigError, PipelineConfig, dose_from_label
from .enhance import candidate_stages, enhance, select_stage
from .noise import simulate_dose
from .phantoms import analytic_ellipsoid_sinogram, perturbed_shepp_logan_table, rasterize
from .pipeline import clean_sinogram, phantom_volume
from .projector import SystemOperator, forward_project
from .solvers import RECONSTRUCTORS, make_reconstructor

LABELS = {"fdk": "FDK", "sirt": "SIRT", "gd": "GD-LS", "nag": "NAG-LS"}
NOISELESS = "noiseless"


class EvaluationError(RuntimeError):
    """A sweep cell failed; ``row`` is its ``(method, dose, seed)``."""

    def __init__(self, row, cause: BaseException):
        super().__init__(f"evaluation of {row} failed: {cause}")
        self.row = row
        self.cause = cause


@dataclass(frozen=True)
class EvalRow:
    method_label: str
    dose_label: str
    mse: float
    psnr: float
    wall_time: float
    seeds: tuple = ()
    seed_mse: tuple = ()

    def __post_init__(self):
        if not self.mse >= 0:
            raise ValueError(f"mse must be >= 0, got {self.mse}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"], d["seed_mse"] = list(self.seeds), list(self.seed_mse)
        return d


def parse_method(label: str) -> tuple:
    """``(base, use_sem, use_iem)`` for a label such as ``nag+sem+iem``."""
    parts = [p.strip() for p in str(label).lower().split("+")]
    base, extras = parts[0], parts[1:]
    if base not in RECONSTRUCTORS:
        raise ConfigError(
            f"unknown reconstruction method {base!r} in {label!r}; valid methods: {', '.join(RECONSTRUCTORS)}"
        )
    if any(e not in ("sem", "iem") for e in extras) or len(set(extras)) != len(extras):
        raise ConfigError(f"method {label!r}: only '+sem' and '+iem' may follow the base method")
    return base, "sem" in extras, "iem" in extras


def display_label(label: str) -> str:
    base, use_sem, use_iem = parse_method(label)
    return LABELS[base] + ("+SEM" if use_sem else "") + ("+IEM" if use_iem else "")


def _timed(fn, *args):
    start = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - start


class _Sweep:
    """Caches shared across cells: fitted reconstructors, stages and reconstructions."""

    def __init__(self, cfg: PipelineConfig, truth: Volume, clean: Sinogram):
        self.cfg, self.truth, self.clean = cfg, truth, clean
        self.reconstructors = {}
        self.stages = {}
        self.training = {}
        self.tuning_log = []

    def reconstructor(self, base):
        if base not in self.reconstructors:
            est = make_reconstructor(base, self.cfg.geometry, **self.cfg.solver_options(base))
            self.reconstructors[base] = est.fit()
        return self.reconstructors[base]

    def dose_model(self, dose, seed):
        return None if dose == NOISELESS else dose_from_label(dose, self.cfg.dose, seed)

    def acquire(self, clean, dose, seed):
        model = self.dose_model(dose, seed)
        return clean if model is None else simulate_dose(clean, model, self.cfg.attenuation_scale)

    def _training_set(self, dose):
        """``[(phantom, clean, measured)]`` for every training seed at ``dose``."""
        if dose not in self.training:
            g, settings = self.cfg.geometry, self.cfg.eval
            items = []
            for seed in settings.train_seeds:
                table = perturbed_shepp_logan_table(seed, settings.train_jitter)
                phantom = rasterize(table, g.nx, g.ny, g.nz, g.voxel_size)
                if self.cfg.clean_source == "analytic":
                    clean = analytic_ellipsoid_sinogram(g, table, dtype=np.float32)
                else:
                    clean = forward_project(SystemOperator(g), phantom)
                items.append((phantom, clean, self.acquire(clean, dose, seed)))
            self.training[dose] = items
        return self.training[dose]

    def sem(self, dose):
        if not self.cfg.eval.tune_enhancers:
            return self.cfg.sem
        key = ("sem", dose)
        if key not in self.stages:
            data = self._training_set(dose)
            stage, scores = select_stage(candidate_stages("sinogram"), [m for _, _, m in data],
                                         [c for _, c, _ in data])
            self.stages[key] = stage
            self.tuning_log.append({"stage": "sem", "dose": dose, "chosen": stage.describe(),
                                    "scores": scores})
        return self.stages[key]

    def iem(self, base, use_sem, dose):
        if not self.cfg.eval.tune_enhancers:
            return self.cfg.iem
        key = ("iem", base, use_sem, dose)
        if key not in self.stages:
            est = self.reconstructor(base)
            sem = self.sem(dose) if use_sem else None
            recons, phantoms = [], []
            for phantom, _, measured in self._training_set(dose):
                x = enhance(sem, measured) if sem is not None else measured
                recons.append(est.transform(x))
                phantoms.append(phantom)
            stage, scores = select_stage(candidate_stages("image"), recons, phantoms)
            self.stages[key] = stage
            self.tuning_log.append({"stage": "iem", "base": base, "sem": use_sem, "dose": dose,
                                    "chosen": stage.describe(), "scores": scores})
        return self.stages[key]


def evaluate_methods(cfg: PipelineConfig, methods, doses, seeds, truth: Optional[Volume] = None,
                     clean: Optional[Sinogram] = None, log=None) -> list:
    """Average MSE/PSNR over ``seeds`` for every ``(method, dose)`` pair.

    Empty ``doses`` means a single noiseless acquisition (seeds are then
    irrelevant); empty ``seeds`` with doses means seed 0. Rows follow the
    order of ``methods`` then ``doses``. ``log`` receives one dict per
    tuning decision and per finished row.
    """
    methods = [m.lower() for m in methods]
    parsed = [parse_method(m) for m in methods]
    doses = [str(d).lower() for d in doses] or [NOISELESS]
    seeds = [0] if doses == [NOISELESS] else ([int(s) for s in seeds] or [0])
    truth = phantom_volume(cfg) if truth is None else truth
    clean = clean_sinogram(cfg, truth) if clean is None else clean
    for d in doses:
        if d != NOISELESS:
            dose_from_label(d)
    overlap = set(seeds) & set(cfg.eval.train_seeds)
    if cfg.eval.tune_enhancers and overlap and doses != [NOISELESS]:
        raise ConfigError(f"evaluation seeds {sorted(overlap)} are also training seeds")
    peak = float(np.max(truth.data if isinstance(truth, Volume) else truth))
    sweep = _Sweep(cfg, truth, clean)
    logged = 0

    rows = []
    for dose in doses:
        per_method = {m: ([], []) for m in methods}
        for seed in seeds:
            measured = sweep.acquire(clean, dose, seed)
            recon_cache = {}
            for label, (base, use_sem, use_iem) in zip(methods, parsed):
                try:
                    elapsed = 0.0
                    if (base, use_sem) not in recon_cache:
                        x = measured
                        if use_sem:
                            x, t = _timed(enhance, sweep.sem(dose), x)
                            elapsed += t
                        x, t = _timed(sweep.reconstructor(base).transform, x)
                        recon_cache[(base, use_sem)] = (x, elapsed + t)
                    x, elapsed = recon_cache[(base, use_sem)]
                    if use_iem:
                        x, t = _timed(enhance, sweep.iem(base, use_sem, dose), x)
                        elapsed += t
                    err = mse(x, truth)
                except ConfigError:
                    raise
                except Exception as exc:
                    raise EvaluationError((label, dose, seed), exc) from exc
                per_method[label][0].append(err)
                per_method[label][1].append(elapsed)
        for label in methods:
            errs, times = per_method[label]
            mean_err = float(np.mean(errs))
            rows.append(EvalRow(
                method_label=display_label(label), dose_label=dose, mse=mean_err,
                psnr=_psnr(mean_err, peak), wall_time=float(np.mean(times)),
                seeds=tuple(seeds), seed_mse=tuple(float(e) for e in errs),
            ))
        if log is not None:
            for entry in sweep.tuning_log[logged:]:
                log({"event": "tuning", **entry})
            logged = len(sweep.tuning_log)
            for row in rows[-len(methods):]:
                log({"event": "row", **row.to_dict()})
    order = {display_label(m): i for i, m in enumerate(methods)}
    return sorted(rows, key=lambda r: (order[r.method_label], doses.index(r.dose_label)))


def _psnr(err: float, peak: float) -> float:
    return math.inf if err == 0 else 10.0 * math.log10(peak * peak / err)


def format_table(rows) -> str:
    """Fixed-width text table: one line per row, methods down, MSE and PSNR across."""
    header = f"{'method':<18} {'dose':<10} {'mse':>12} {'psnr_db':>9} {'time_s':>8} {'seeds':>5}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r.method_label:<18} {r.dose_label:<10} {r.mse:>12.6f} {r.psnr:>9.3f} "
                     f"{r.wall_time:>8.2f} {len(r.seeds):>5}")
    return "\n".join(lines)


def write_jsonl(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r.to_dict(), allow_nan=True) + "\n")
