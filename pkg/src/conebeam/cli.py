"""Command-line interface: ``conebeam <subcommand> [options]``.

Every subcommand reads an optional INI config (``--config``) plus
``--set section.key=value`` overrides, and dedicated flags override both.
Exit codes: 0 success, 1 computational failure, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from ._threads import configure_threads
from .arrays import FormatError, Sinogram, Volume, load, read_header, write_array
from .config import ConfigError, dose_from_label, load_config
from .enhance import KINDS, SLICINGS, EnhancementStage, Enhancer, enhance
from .evaluation import evaluate_methods, format_table, write_jsonl
from .geometry import GeometryError
from .noise import DOSE_PRESETS, simulate_dose
from .pipeline import phantom_volume, run_pipeline
from .projector import SystemOperator, back_project, forward_project
from .solvers import RECONSTRUCTORS

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _common(p):
    p.add_argument("--config", metavar="FILE", help="INI run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")


def _output(p, required=True):
    p.add_argument("-o", "--output", required=required, metavar="FILE", help="output .ctarr path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conebeam", description="Cone-beam CT simulation, reconstruction and evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("phantom", help="rasterize a ground-truth volume")
    _common(p)
    _output(p)
    p.add_argument("--kind", choices=("shepp-logan", "sphere"), help="phantom kind ([phantom] kind)")
    p.add_argument("--center", type=float, nargs=3, metavar=("X", "Y", "Z"),
                   help="sphere centre in normalised units")
    p.add_argument("--radius", type=float, help="sphere radius in normalised units")
    p.add_argument("--value", type=float, help="sphere density")

    p = sub.add_parser("project", help="forward-project a volume")
    _common(p)
    p.add_argument("input", help="volume .ctarr")
    _output(p)

    p = sub.add_parser("backproject", help="apply the adjoint to a sinogram")
    _common(p)
    p.add_argument("input", help="sinogram .ctarr")
    _output(p)

    p = sub.add_parser("noise", help="simulate a transmission acquisition of a clean sinogram")
    _common(p)
    p.add_argument("input", help="clean sinogram .ctarr")
    _output(p)
    p.add_argument("--dose", help=f"preset ({', '.join(DOSE_PRESETS)}) or photon count i0")
    p.add_argument("--i0", type=float, help="photon count; overrides --dose and [dose]")
    p.add_argument("--seed", type=int, help="noise seed")
    p.add_argument("--attenuation-scale", type=float, help="mm^-1 per phantom unit")

    p = sub.add_parser("enhance", help="filter a sinogram or a volume")
    _common(p)
    p.add_argument("input", help="sinogram or volume .ctarr")
    _output(p)
    p.add_argument("--kind", choices=KINDS, help="enhancer kind (default from [sem]/[iem])")
    p.add_argument("--slicing", choices=sorted({s for v in SLICINGS.values() for s in v}),
                   help="per_view/per_z_slice or volumetric")
    p.add_argument("--sigma", type=float, help="gaussian standard deviation")
    p.add_argument("--radius", type=int, help="median half-window")
    p.add_argument("--lambda", dest="weight", type=float, help="TV weight")
    p.add_argument("--iterations", type=int, help="TV iterations")

    p = sub.add_parser("recon", help="reconstruct a sinogram (no enhancement)")
    _common(p)
    p.add_argument("input", help="sinogram .ctarr")
    _output(p)
    p.add_argument("--method", choices=tuple(RECONSTRUCTORS), help="reconstruction method")
    p.add_argument("--max-iters", type=int, help="iteration cap for iterative methods")
    p.add_argument("--truth", help="ground-truth volume for the MSE in the report")

    p = sub.add_parser("pipeline", help="run SEM -> reconstruction -> IEM")
    _common(p)
    _output(p)
    p.add_argument("--input", help="sinogram .ctarr (default: synthetic acquisition of [phantom])")
    p.add_argument("--truth", help="ground-truth volume .ctarr")
    p.add_argument("--method", choices=tuple(RECONSTRUCTORS), help="reconstruction method")
    p.add_argument("--intermediates", metavar="DIR", help="write every stage output here")

    p = sub.add_parser("eval", help="method x dose x seed sweep against the phantom")
    _common(p)
    p.add_argument("--methods", help="comma list, e.g. fdk,sirt,nag,nag+sem,nag+sem+iem")
    p.add_argument("--doses", help="comma list of presets or photon counts; empty for noiseless")
    p.add_argument("--seeds", help="comma list of noise seeds")
    p.add_argument("--jsonl", metavar="FILE", help="write rows as line-delimited JSON")
    p.add_argument("--table", metavar="FILE", help="write the text table here as well")
    p.add_argument("--log", metavar="FILE", help="write tuning decisions and rows as JSON lines")

    p = sub.add_parser("info", help="print a .ctarr header")
    p.add_argument("input", help=".ctarr file")
    return parser


def _cfg(args, extra=()):
    return load_config(args.config, list(args.overrides) + list(extra))


def _require_file(path):
    if not Path(path).is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    return load(path)


def _expect(obj, cls, path):
    if not isinstance(obj, cls):
        raise UsageError(f"{path} holds a {type(obj).__name__.lower()}, expected a {cls.__name__.lower()}")
    return obj


def cmd_phantom(args):
    cfg = _cfg(args)
    spec = cfg.phantom
    changes = {k: v for k, v in (("kind", args.kind), ("radius", args.radius), ("value", args.value))
               if v is not None}
    if args.center is not None:
        changes["center"] = tuple(args.center)
    cfg = replace(cfg, phantom=replace(spec, **changes) if changes else spec)
    try:
        vol = phantom_volume(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_array(args.output, vol, {"phantom": cfg.phantom.kind})


def cmd_project(args):
    cfg = _cfg(args)
    vol = _expect(_require_file(args.input), Volume, args.input)
    write_array(args.output, forward_project(SystemOperator(cfg.geometry), vol))


def cmd_backproject(args):
    cfg = _cfg(args)
    sino = _expect(_require_file(args.input), Sinogram, args.input)
    write_array(args.output, back_project(SystemOperator(cfg.geometry), sino))


def cmd_noise(args):
    cfg = _cfg(args)
    sino = _expect(_require_file(args.input), Sinogram, args.input)
    model = cfg.dose
    if args.dose is not None:
        model = dose_from_label(args.dose, model, model.seed if model else 0)
    if args.i0 is not None:
        model = dose_from_label(args.i0, model, model.seed if model else 0)
    if model is None:
        raise UsageError("no dose given: use --dose, --i0 or a [dose] section")
    if args.seed is not None:
        model = replace(model, seed=args.seed)
    scale = args.attenuation_scale if args.attenuation_scale is not None else cfg.attenuation_scale
    write_array(args.output, simulate_dose(sino, model, scale), {"i0": model.i0, "seed": model.seed})


def cmd_enhance(args):
    cfg = _cfg(args)
    data = _require_file(args.input)
    base = cfg.sem if isinstance(data, Sinogram) else cfg.iem
    params = base.enhancer.get_params()
    for key in ("kind", "sigma", "radius", "weight"):
        if getattr(args, key) is not None:
            params[key] = getattr(args, key)
    if args.iterations is not None:
        params["n_iter"] = args.iterations
    stage = EnhancementStage(base.domain, Enhancer(**params), args.slicing or base.slicing)
    try:
        stage.fit()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_array(args.output, enhance(stage, data), {"enhancer": stage.describe()})


def cmd_recon(args):
    extra = []
    if args.method:
        extra.append(f"solver.method={args.method}")
    if args.max_iters is not None:
        extra.append(f"solver.max_iters={args.max_iters}")
    cfg = _cfg(args, extra)
    _expect(_require_file(args.input), Sinogram, args.input)
    if args.truth:
        _require_file(args.truth)
    cfg = replace(cfg, sem=EnhancementStage("sinogram", Enhancer()), iem=EnhancementStage("image", Enhancer()),
                  input_path=args.input, truth_path=args.truth, output_path=args.output, dose=None)
    _, report = run_pipeline(cfg)
    _print_report(report)


def cmd_pipeline(args):
    extra = [f"solver.method={args.method}"] if args.method else []
    cfg = _cfg(args, extra)
    changes = {"output_path": args.output}
    for key, value in (("input_path", args.input), ("truth_path", args.truth),
                       ("intermediates_dir", args.intermediates)):
        if value is not None:
            changes[key] = value
    cfg = replace(cfg, **changes)
    for path in (cfg.input_path, cfg.truth_path):
        if path is not None and not Path(path).is_file():
            raise FileNotFoundError(f"input file not found: {path}")
    _, report = run_pipeline(cfg)
    _print_report(report)


def _print_report(report):
    for s in report.stages:
        err = "" if s.mse is None else f"  mse={s.mse:.6g}"
        print(f"{s.name:<6} {s.wall_time:8.3f} s{err}")


def _split(raw):
    return [x.strip() for x in raw.split(",") if x.strip()]


def cmd_eval(args):
    cfg = _cfg(args)
    settings = cfg.eval
    methods = _split(args.methods) if args.methods is not None else list(settings.methods)
    doses = _split(args.doses) if args.doses is not None else list(settings.doses)
    try:
        seeds = [int(s) for s in _split(args.seeds)] if args.seeds is not None else list(settings.seeds)
    except ValueError:
        raise UsageError(f"--seeds must be a comma list of integers, got {args.seeds!r}") from None
    log_fh = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        log = (lambda entry: log_fh.write(json.dumps(entry, default=str) + "\n") and log_fh.flush()) \
            if log_fh else None
        rows = evaluate_methods(cfg, methods, doses, seeds, log=log)
    finally:
        if log_fh:
            log_fh.close()
    table = format_table(rows)
    print(table)
    if args.table:
        Path(args.table).write_text(table + "\n")
    if args.jsonl:
        write_jsonl(rows, args.jsonl)


def cmd_info(args):
    if not Path(args.input).is_file():
        raise FileNotFoundError(f"input file not found: {args.input}")
    header = read_header(args.input)
    print(json.dumps(header, indent=2, sort_keys=True))


COMMANDS = {
    "phantom": cmd_phantom, "project": cmd_project, "backproject": cmd_backproject,
    "noise": cmd_noise, "enhance": cmd_enhance, "recon": cmd_recon, "pipeline": cmd_pipeline,
    "eval": cmd_eval, "info": cmd_info,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        configure_threads()
        COMMANDS[args.command](args)
    except (UsageError, ConfigError, GeometryError, FormatError, OSError) as exc:
        print(f"conebeam {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"conebeam {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
