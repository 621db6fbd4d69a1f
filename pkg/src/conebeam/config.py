"""INI run configuration shared by the pipeline, the evaluation sweep and the CLI.

Sections: ``[geometry] [dose] [sem] [solver] [iem] [eval]`` plus the
optional ``[phantom]`` (synthetic ground truth) and ``[paths]``. Every
section may be omitted. A missing ``[geometry]`` means the desk preset, a
missing ``[dose]`` means noiseless data, and missing ``[sem]``/``[iem]``
mean identity stages.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional

from .enhance import EnhancementStage, Enhancer, load_enhancer
from .geometry import ConeBeamGeometry, geometry_from_config
from .noise import DEFAULT_COUNT_FLOOR, DOSE_PRESETS, DoseModel
from .solvers import RECONSTRUCTORS

SECTIONS = ("geometry", "dose", "sem", "solver", "iem", "eval", "phantom", "paths")
DEFAULT_ATTENUATION_SCALE = 0.02  # mm^-1; phantom value 1 is roughly water
CLEAN_SOURCES = ("projector", "analytic")
PHANTOM_KINDS = ("shepp-logan", "sphere")

_BOOL = configparser.ConfigParser.BOOLEAN_STATES
SOLVER_OPTIONS = {
    "max_iters": int, "grad_tol": float, "lipschitz": float, "safety": float,
    "nonneg": lambda s: _parse_bool("solver", "nonneg", s),
    "record_history": lambda s: _parse_bool("solver", "record_history", s),
    "window": str, "pad_to": int,
}


class ConfigError(ValueError):
    """Invalid or unreadable configuration (a usage error, CLI exit code 2)."""


def _parse_bool(section, key, raw):
    try:
        return _BOOL[str(raw).strip().lower()]
    except KeyError:
        raise ConfigError(f"[{section}] {key} is not a boolean: {raw!r}") from None


def _parse_list(raw: str) -> list:
    return [item.strip() for item in str(raw).replace("\n", ",").split(",") if item.strip()]


def _number(section, key, raw, conv=float):
    try:
        return conv(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"[{section}] {key} is not a valid number: {raw!r}") from None


def _reject_unknown(section: str, values: Mapping, known) -> None:
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown [{section}] keys: {unknown}; known: {sorted(known)}")


@dataclass(frozen=True)
class PhantomSpec:
    """Synthetic ground truth. Sphere centre and radius are in normalised units."""

    kind: str = "shepp-logan"
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.5
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in PHANTOM_KINDS:
            raise ConfigError(f"unknown phantom kind {self.kind!r}; known: {', '.join(PHANTOM_KINDS)}")


@dataclass(frozen=True)
class EvalSettings:
    methods: tuple = ("fdk", "sirt", "nag", "nag+sem", "nag+sem+iem")
    doses: tuple = ("low", "clinical")
    seeds: tuple = (0, 1, 2)
    tune_enhancers: bool = True
    train_seeds: tuple = (1000,)
    train_jitter: float = 0.05


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one SEM -> reconstruction -> IEM run needs."""

    geometry: ConeBeamGeometry
    method: str = "nag"
    solver: dict = field(default_factory=dict)
    sem: EnhancementStage = field(default_factory=lambda: EnhancementStage("sinogram", Enhancer()))
    iem: EnhancementStage = field(default_factory=lambda: EnhancementStage("image", Enhancer()))
    dose: Optional[DoseModel] = None
    attenuation_scale: float = DEFAULT_ATTENUATION_SCALE
    phantom: PhantomSpec = PhantomSpec()
    clean_source: str = "projector"
    input_path: Optional[str] = None
    truth_path: Optional[str] = None
    output_path: Optional[str] = None
    intermediates_dir: Optional[str] = None
    evaluate: bool = True
    eval: EvalSettings = EvalSettings()

    def __post_init__(self):
        if self.method not in RECONSTRUCTORS:
            raise ConfigError(
                f"unknown reconstruction method {self.method!r}; valid methods: {', '.join(RECONSTRUCTORS)}"
            )
        if self.clean_source not in CLEAN_SOURCES:
            raise ConfigError(f"clean_source must be one of {CLEAN_SOURCES}, got {self.clean_source!r}")
        if not self.attenuation_scale > 0:
            raise ConfigError(f"attenuation_scale must be > 0, got {self.attenuation_scale}")
        _reject_unknown("solver", self.solver, SOLVER_OPTIONS)

    def solver_options(self, method: Optional[str] = None) -> dict:
        """The ``[solver]`` options that ``method``'s estimator accepts."""
        accepted = RECONSTRUCTORS[method or self.method]().get_params()
        return {k: v for k, v in self.solver.items() if k in accepted}

    def with_overrides(self, **changes) -> "PipelineConfig":
        return replace(self, **changes)


def parse_dose(section: Mapping) -> tuple:
    """``(DoseModel or None, attenuation_scale)`` from a ``[dose]`` section."""
    section = dict(section)
    _reject_unknown("dose", section, ("preset", "i0", "count_floor", "seed", "attenuation_scale"))
    scale = _number("dose", "attenuation_scale", section.get("attenuation_scale", DEFAULT_ATTENUATION_SCALE))
    preset = section.get("preset", "none").strip().lower()
    if preset not in DOSE_PRESETS and preset != "none":
        raise ConfigError(f"unknown dose preset {preset!r}; known: none, {', '.join(DOSE_PRESETS)}")
    if "i0" in section:
        i0 = _number("dose", "i0", section["i0"])
    elif preset == "none":
        return None, scale
    else:
        i0 = DOSE_PRESETS[preset]
    try:
        model = DoseModel(
            i0,
            count_floor=_number("dose", "count_floor", section.get("count_floor", DEFAULT_COUNT_FLOOR)),
            seed=_number("dose", "seed", section.get("seed", 0), int),
        )
    except ValueError as exc:
        raise ConfigError(f"[dose] {exc}") from None
    return model, scale


def dose_from_label(label, template: Optional[DoseModel] = None, seed: int = 0) -> DoseModel:
    """A dose model from a preset name or a photon count, keeping ``template``'s count floor."""
    floor = template.count_floor if template is not None else DEFAULT_COUNT_FLOOR
    key = str(label).strip().lower()
    if key in DOSE_PRESETS:
        return DoseModel(DOSE_PRESETS[key], count_floor=floor, seed=seed)
    try:
        return DoseModel(float(key), count_floor=floor, seed=seed)
    except ValueError:
        raise ConfigError(
            f"dose {label!r} is neither a preset ({', '.join(DOSE_PRESETS)}) nor a photon count"
        ) from None


def parse_phantom(section: Mapping) -> PhantomSpec:
    section = dict(section)
    _reject_unknown("phantom", section, ("kind", "center", "radius", "value"))
    kwargs = {"kind": section.get("kind", "shepp-logan").strip().lower()}
    if "center" in section:
        center = tuple(_number("phantom", "center", c) for c in _parse_list(section["center"]))
        if len(center) != 3:
            raise ConfigError(f"[phantom] center needs three components, got {section['center']!r}")
        kwargs["center"] = center
    for key in ("radius", "value"):
        if key in section:
            kwargs[key] = _number("phantom", key, section[key])
    return PhantomSpec(**kwargs)


def parse_eval(section: Mapping) -> tuple:
    """``(EvalSettings, clean_source)`` from an ``[eval]`` section."""
    section = dict(section)
    _reject_unknown("eval", section, ("methods", "doses", "seeds", "tune_enhancers", "train_seeds",
                                      "train_jitter", "clean_source", "evaluate"))
    kwargs = {}
    for key in ("methods", "doses"):
        if key in section:
            kwargs[key] = tuple(x.lower() for x in _parse_list(section[key]))
    for key in ("seeds", "train_seeds"):
        if key in section:
            kwargs[key] = tuple(_number("eval", key, s, int) for s in _parse_list(section[key]))
    if "tune_enhancers" in section:
        kwargs["tune_enhancers"] = _parse_bool("eval", "tune_enhancers", section["tune_enhancers"])
    if "train_jitter" in section:
        kwargs["train_jitter"] = _number("eval", "train_jitter", section["train_jitter"])
    return EvalSettings(**kwargs), section.get("clean_source", "projector").strip().lower()


def parse_solver(section: Mapping) -> tuple:
    """``(method, options)`` from a ``[solver]`` section; option values are typed."""
    section = dict(section)
    method = section.pop("method", "nag").strip().lower()
    _reject_unknown("solver", section, SOLVER_OPTIONS)
    options = {}
    for key, raw in section.items():
        conv = SOLVER_OPTIONS[key]
        options[key] = raw.strip() if conv is str else _number("solver", key, raw, conv)
    return method, options


def config_from_mapping(sections: Mapping[str, Mapping[str, str]]) -> PipelineConfig:
    """Build a :class:`PipelineConfig` from ``{section: {key: value}}`` strings."""
    unknown = sorted(set(sections) - set(SECTIONS) - {"DEFAULT"})
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}; known: {list(SECTIONS)}")

    def get(name):
        return {k: v for k, v in dict(sections.get(name, {})).items()}

    geom_section = get("geometry") or {"preset": "desk"}
    try:
        geometry = geometry_from_config(geom_section)
        sem = load_enhancer(get("sem"), domain="sinogram")
        iem = load_enhancer(get("iem"), domain="image")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if sem.domain != "sinogram" or iem.domain != "image":
        raise ConfigError("[sem] must act on the sinogram domain and [iem] on the image domain")
    dose, scale = parse_dose(get("dose"))
    method, options = parse_solver(get("solver"))
    eval_section = get("eval")
    settings, clean_source = parse_eval(eval_section)
    paths = get("paths")
    _reject_unknown("paths", paths, ("input", "truth", "output", "intermediates"))
    evaluate = _parse_bool("eval", "evaluate", eval_section.get("evaluate", "true"))
    return PipelineConfig(
        geometry=geometry, method=method, solver=options, sem=sem, iem=iem, dose=dose,
        attenuation_scale=scale, phantom=parse_phantom(get("phantom")), clean_source=clean_source,
        input_path=paths.get("input"), truth_path=paths.get("truth"), output_path=paths.get("output"),
        intermediates_dir=paths.get("intermediates"), evaluate=evaluate, eval=settings,
    )


def read_sections(path=None, overrides=()) -> dict:
    """Parse an INI file (optional) and apply ``section.key=value`` overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    sections = {name: dict(parser[name]) for name in parser.sections()}
    for item in overrides:
        target, sep, value = item.partition("=")
        section, dot, key = target.partition(".")
        if not sep or not dot or not section or not key:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        sections.setdefault(section.strip(), {})[key.strip().lower()] = value.strip()
    return sections


def load_config(path=None, overrides=()) -> PipelineConfig:
    return config_from_mapping(read_sections(path, overrides))
