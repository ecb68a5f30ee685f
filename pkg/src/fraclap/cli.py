"""Command-line front end.

Subcommands::

    fraclap op-error   --dim 2 --alpha 0.4 --s 1 --h 1/16,1/32 --ref-h 1/1024
    fraclap poisson    --alpha 1 --rhs one --h 1/16,1/32 --ref-h 1/512
    fraclap allen-cahn --alpha 1.9 --h 1/256 --tau 1e-3 --t-end 0.05
    fraclap stencil    build|inspect|verify ...

Settings are resolved as command-line flags, then ``--config`` JSON, then
built-in defaults.  Every run that passes validation writes
``manifest.json`` into the output directory.

Exit codes: 0 success, 1 computation failure, 2 invalid arguments,
3 unreadable or corrupt input file.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import platform
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FileFormatError, FracLapError, PicardNotConverged
from .io import (cache_dir, read_stencil, stencil_cache_path, write_field,
                 write_stencil)
from .krylov import CgConfig
from .pde import (AllenCahnConfig, allen_cahn_run, poisson_solve, poisson_study,
                  truncation_study)
from .singquad import QuadConfig
from .stencil import FracParams, build_stencil, coefficient_entry
from .toeplitz import GridSpec, set_fft_workers

log = logging.getLogger("fraclap")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_FORMAT = 0, 1, 2, 3


class UsageError(Exception):
    pass


# --- value parsing --------------------------------------------------------------

def parse_fraction(text):
    """``"1/16"``, ``"0.0625"`` or a number -> positive Fraction."""
    if isinstance(text, Fraction):
        value = text
    else:
        try:
            value = Fraction(str(text).strip())
        except (ValueError, ZeroDivisionError):
            raise UsageError(f"not a valid fraction: {text!r}") from None
    if value <= 0:
        raise UsageError(f"mesh size must be positive: {text!r}")
    return value


def parse_fraction_list(value):
    if isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [t for t in str(value).split(",") if t.strip()]
    if not items:
        raise UsageError("empty list of mesh sizes")
    return [parse_fraction(t) for t in items]


def parse_centers(value):
    if isinstance(value, str):
        value = [[float(x) for x in p.split(",")] for p in value.split(";") if p.strip()]
    return tuple(tuple(float(x) for x in p) for p in value)


def fmt(x):
    """17 significant digits (round-trip exact); empty for a missing value."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (tuple, list)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# --- configuration ------------------------------------------------------------

COMMON_DEFAULTS = {
    "out": ".",
    "quad_rel_tol": 1e-12,
    "quad_abs_tol": 1e-15,
    "cg_tol": 1e-10,
    "cg_max_iter": None,
    "cache_dir": None,
    "threads": None,
}

DEFAULTS = {
    "op-error": {"dim": 2, "alpha": 0.5, "gamma": 2.0, "s": 2.0,
                 "h": "1/16,1/32,1/64,1/128", "ref_h": "1/1024"},
    "poisson": {"dim": 2, "alpha": 1.0, "gamma": 2.0, "rhs": "manufactured:s=2",
                "h": "1/16,1/32,1/64,1/128", "ref_h": None, "compare": "reference"},
    "allen-cahn": {"dim": 2, "alpha": 1.9, "gamma": 2.0, "h": "1/256", "tau": 1e-3,
                   "delta": 0.03, "t_end": 0.05, "snapshot_every": 10,
                   "picard_tol": 1e-8, "picard_max": 50, "linearize": True,
                   "centers": [[0.4, 0.4], [0.6, 0.6]], "radius_offset": 0.12},
    "stencil": {"dim": 2, "alpha": 1.0, "gamma": 2.0, "N": 64, "h": None, "path": None,
                "samples": 10, "seed": 0, "output": None},
}


def _add_common(p):
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="JSON file with settings (flags win)")
    p.add_argument("--out", default=S, help="output directory (default: .)")
    p.add_argument("--quad-rel-tol", type=float, default=S)
    p.add_argument("--quad-abs-tol", type=float, default=S)
    p.add_argument("--cg-tol", type=float, default=S)
    p.add_argument("--cg-max-iter", type=int, default=S)
    p.add_argument("--cache-dir", default=S,
                   help="stencil cache directory (default: $FRACLAP_CACHE_DIR; unset = no cache)")
    p.add_argument("--threads", type=int, default=S, help="cap on FFT worker threads")


def _add_params(p, s=False):
    S = argparse.SUPPRESS
    p.add_argument("--dim", type=int, default=S, choices=(2, 3))
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--gamma", type=float, default=S)
    if s:
        p.add_argument("--s", type=float, default=S, help="exponent of the test function")


def build_parser():
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="fraclap", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("op-error", help="operator error on the manufactured function")
    _add_params(p, s=True)
    p.add_argument("--h", default=S, help="comma-separated mesh sizes, e.g. 1/16,1/32")
    p.add_argument("--ref-h", default=S, help="reference mesh size")
    _add_common(p)

    p = sub.add_parser("poisson", help="fractional Poisson solves")
    _add_params(p)
    p.add_argument("--rhs", default=S, help="manufactured:s=<s> or one")
    p.add_argument("--h", default=S)
    p.add_argument("--ref-h", default=S, help="reference mesh (needed for errors)")
    p.add_argument("--compare", choices=("reference", "successive"), default=S,
                   help="with --rhs one: error against the --ref-h solution or against h/2")
    _add_common(p)

    p = sub.add_parser("allen-cahn", help="two-bubble Allen-Cahn run on (0,1)^d")
    _add_params(p)
    p.add_argument("--h", default=S)
    p.add_argument("--tau", type=float, default=S)
    p.add_argument("--delta", type=float, default=S)
    p.add_argument("--t-end", type=float, default=S)
    p.add_argument("--snapshot-every", type=int, default=S)
    p.add_argument("--picard-tol", type=float, default=S)
    p.add_argument("--picard-max", type=int, default=S)
    p.add_argument("--plain-picard", dest="linearize", action="store_false", default=S,
                   help="disable the frozen linearisation of the reaction term")
    p.add_argument("--centers", default=S, help='two points, e.g. "0.4,0.4;0.6,0.6"')
    _add_common(p)

    p = sub.add_parser("stencil", help="build, inspect or verify stencil files")
    p.add_argument("action", choices=("build", "inspect", "verify"))
    p.add_argument("path", nargs="?", default=S, help="stencil file (inspect/verify)")
    _add_params(p)
    p.add_argument("--N", type=int, default=S, help="intervals across the longest side")
    p.add_argument("--h", default=S, help="mesh size (default 2/N)")
    p.add_argument("--output", default=S, help="file to write (default: cache path)")
    p.add_argument("--samples", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    _add_common(p)
    return parser


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    # a manifest from a previous run can be fed back in directly
    data = data.get("config", data)
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve(args):
    """Defaults < config file < flags."""
    flags = {k: v for k, v in vars(args).items() if k not in ("verbose", "config")}
    conf = dict(COMMON_DEFAULTS, **DEFAULTS[args.command])
    if getattr(args, "config", None):
        extra = load_config(args.config)
        unknown = set(extra) - set(conf) - {"command", "action"}
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        conf.update({k: v for k, v in extra.items() if k in conf})
    conf.update(flags)
    if conf.get("cache_dir") is None and os.environ.get("FRACLAP_CACHE_DIR"):
        conf["cache_dir"] = str(cache_dir())
    return conf


def _params(conf):
    try:
        return FracParams(int(conf["dim"]), float(conf["alpha"]), float(conf["gamma"]))
    except (FracLapError, TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _solver_configs(conf):
    try:
        quad = QuadConfig(rel_tol=float(conf["quad_rel_tol"]),
                          abs_tol=float(conf["quad_abs_tol"]))
        cg = CgConfig(tol=float(conf["cg_tol"]), max_iter=conf["cg_max_iter"])
    except (FracLapError, TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return quad, cg


def _check_h(h, lo=-1, hi=1):
    if ((Fraction(hi) - Fraction(lo)) / h).denominator != 1:
        raise UsageError(f"h = {h} does not divide the domain length {hi - lo}")
    if (Fraction(hi) - Fraction(lo)) / h < 2:
        raise UsageError(f"h = {h} leaves no interior nodes")


def _check_nesting(hs, ref):
    for h in hs:
        _check_h(h)
        if (h / ref).denominator != 1:
            raise UsageError(f"reference h = {ref} does not divide h = {h}")
    _check_h(ref)
    if not ref <= min(hs) / 4:
        raise UsageError(f"reference h = {ref} must be at most min(h)/4")


# --- outputs ------------------------------------------------------------------

def write_report_csv(path, report):
    cols = ["h", "err_inf", "rate_inf", "err_2", "rate_2"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in report.rows():
            w.writerow([fmt(row[c]) for c in cols])


class Run:
    """Output directory plus the manifest written at the end of a run."""

    def __init__(self, command, conf, argv):
        self.command = command
        self.conf = conf
        self.argv = argv
        self.out = Path(conf["out"])
        self.outputs = []
        self.timings = {}
        self.extra = {}
        self.t0 = time.perf_counter()

    def path(self, name):
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        self.outputs.append(name)
        return p

    def finish(self, status):
        manifest = {
            "tool": "fraclap",
            "version": __version__,
            "command": self.command,
            "argv": self.argv,
            "config": _jsonable(self.conf),
            "status": status,
            "outputs": self.outputs,
            "results": _jsonable(self.extra),
            "timing": {"wall_seconds": time.perf_counter() - self.t0, **self.timings},
            "platform": {"python": platform.python_version(), "numpy": np.__version__},
        }
        self.out.mkdir(parents=True, exist_ok=True)
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


# --- subcommands --------------------------------------------------------------

def cmd_op_error(conf, run=None):
    params = _params(conf)
    quad, _ = _solver_configs(conf)
    hs = parse_fraction_list(conf["h"])
    ref = parse_fraction(conf["ref_h"])
    _check_nesting(hs, ref)
    try:
        s = float(conf["s"])
        if not s >= 1:
            raise ValueError
    except (TypeError, ValueError):
        raise UsageError(f"s must be a number >= 1, got {conf['s']!r}") from None
    conf.update(h=[str(h) for h in hs], ref_h=str(ref), s=s)
    if run is None:
        return EXIT_OK
    report = truncation_study(params, s, hs, ref, quad, cache=conf["cache_dir"])
    write_report_csv(run.path("op_error.csv"), report)
    run.extra.update(report.metadata, fitted_rate_inf=report.fitted_rate_inf)
    for row in report.rows():
        print(f"h={Fraction(row['h']).limit_denominator()}  err_inf={row['err_inf']:.6e}  "
              f"rate={fmt(row['rate_inf']) or '-'}")
    return EXIT_OK


def _parse_rhs(rhs):
    kind, _, rest = str(rhs).partition(":")
    if kind == "one" and not rest:
        return kind, None
    if kind == "manufactured":
        try:
            opts = dict(kv.split("=", 1) for kv in rest.split(",") if kv)
            s = float(opts.pop("s", 2))
            if opts or not s >= 1:
                raise ValueError
        except ValueError:
            raise UsageError(f"bad manufactured options in {rhs!r}") from None
        return kind, s
    raise UsageError(f"unknown right-hand side {rhs!r} (use manufactured:s=<s> or one)")


def cmd_poisson(conf, run=None):
    params = _params(conf)
    quad, cg = _solver_configs(conf)
    kind, s = _parse_rhs(conf["rhs"])
    rhs = "one" if kind == "one" else f"manufactured:s={s:g}"
    hs = parse_fraction_list(conf["h"])
    ref = conf["ref_h"]
    compare = conf["compare"]
    if compare not in ("reference", "successive"):
        raise UsageError(f"compare must be reference or successive, got {compare!r}")
    if compare == "successive":
        if kind != "one":
            raise UsageError("--compare successive needs --rhs one")
        ref = None
    elif kind == "manufactured" and ref is None:
        raise UsageError("manufactured right-hand sides need --ref-h")
    if ref is not None:
        ref = parse_fraction(ref)
        _check_nesting(hs, ref)
    else:
        for h in hs:
            _check_h(h)
    conf.update(rhs=rhs, h=[str(h) for h in hs], ref_h=None if ref is None else str(ref))
    if run is None:
        return EXIT_OK
    if ref is not None or compare == "successive":
        report = poisson_study(params, hs, ref, rhs, cg, quad, cache=conf["cache_dir"],
                               keep_solutions=True, compare=compare)
        solutions = report.solutions
    else:
        report = None
        solutions = [poisson_solve(params, GridSpec.box(-1, 1, params.d, h),
                                   np.ones(GridSpec.box(-1, 1, params.d, h).size),
                                   cg, quad, cache=conf["cache_dir"]) for h in hs]
    for sol in solutions:
        name = f"u_N{sol.grid.N}.frlp"
        write_field(run.path(name), sol, alpha=params.alpha, gamma=params.gamma, rhs=rhs,
                    cg_iters=sol.info["iters"])
        print(f"h={Fraction(sol.grid.h).limit_denominator()}: {sol.info['iters']} CG "
              f"iterations, max u = {sol.values.max():.6e}")
    if report is not None:
        write_report_csv(run.path("poisson_error.csv"), report)
        run.extra.update(report.metadata, fitted_rate_inf=report.fitted_rate_inf)
        for row in report.rows():
            print(f"h={Fraction(row['h']).limit_denominator()}  err_inf={row['err_inf']:.6e}  "
                  f"rate={fmt(row['rate_inf']) or '-'}")
    return EXIT_OK


def cmd_allen_cahn(conf, run=None):
    params = _params(conf)
    quad, cg = _solver_configs(conf)
    h = parse_fraction_list(conf["h"])
    if len(h) != 1:
        raise UsageError("allen-cahn takes a single mesh size")
    h = h[0]
    _check_h(h, 0, 1)
    try:
        cfg = AllenCahnConfig(
            alpha=params.alpha, delta=float(conf["delta"]), tau=float(conf["tau"]),
            t_end=float(conf["t_end"]), centers=parse_centers(conf["centers"]),
            radius_offset=float(conf["radius_offset"]),
            picard_tol=float(conf["picard_tol"]), picard_max=int(conf["picard_max"]),
            snapshot_every=int(conf["snapshot_every"]),
            linearize=bool(conf["linearize"]))
        grid = GridSpec.box(0, 1, params.d, h)
        cfg.check_grid(grid)
    except (FracLapError, TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    conf.update(h=str(h), centers=[list(c) for c in cfg.centers])
    if run is None:
        return EXIT_OK
    result = allen_cahn_run(cfg, grid, params, quad, cg, cache=conf["cache_dir"])
    for i, (t, u) in enumerate(zip(result.snapshot_times, result.snapshots)):
        write_field(run.path(f"snapshot_{i:04d}.frlp"), u, t=t,
                    merged=result.merged[i], alpha=params.alpha)
    with open(run.path("mass.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mass"])
        for t, m in result.mass_series:
            w.writerow([fmt(t), fmt(m)])
    run.extra.update(steps=cfg.n_steps, picard_iters=result.picard_iters,
                     cg_iters=result.cg_iters, merged=result.merged,
                     snapshot_times=result.snapshot_times, max_abs_u=result.max_abs,
                     seconds=result.seconds)
    print(f"{cfg.n_steps} steps, {len(result.snapshots)} snapshots, "
          f"max Picard {max(result.picard_iters, default=0)}, "
          f"merged at any snapshot: {any(result.merged)}")
    return EXIT_OK


def _stencil_file(conf):
    if conf.get("path") is None:
        raise UsageError("a stencil file path is required")
    return Path(conf["path"])


def cmd_stencil(conf, run=None):
    action = conf["action"]
    if action == "build":
        params = _params(conf)
        quad, _ = _solver_configs(conf)
        try:
            N = int(conf["N"])
            if N < 2:
                raise ValueError
        except (TypeError, ValueError):
            raise UsageError(f"N must be an integer >= 2, got {conf['N']!r}") from None
        h = Fraction(2, N) if conf["h"] is None else parse_fraction(conf["h"])
        conf.update(h=str(h), N=N)
        if run is None:
            return EXIT_OK
        stencil = build_stencil(params, N, float(h), quad)
        target = conf["output"] or conf.get("path")
        if target:
            target = Path(target)
            if not target.is_absolute():
                target = run.out / target
        else:
            target = stencil_cache_path(params, N, float(h), quad.rel_tol,
                                        conf["cache_dir"])
        write_stencil(target, stencil, quad.rel_tol)
        run.outputs.append(str(target))
        run.extra.update(path=str(target), center=stencil.entry(*(0,) * params.d))
        print(target)
        return EXIT_OK

    path = _stencil_file(conf)
    if not path.exists():
        raise UsageError(f"no such file: {path}")
    if run is None:
        return EXIT_OK
    stencil, header = read_stencil(path)
    if action == "inspect":
        d = stencil.d
        summary = dict(header, center=stencil.entry(*(0,) * d),
                       first=stencil.entry(*((1,) + (0,) * (d - 1))),
                       identity_residual=stencil.center_identity_residual())
        run.extra.update(summary)
        print(json.dumps(summary, indent=2, sort_keys=True))
        return EXIT_OK

    # verify: recompute random off-centre entries from scalar quadrature
    quad = QuadConfig(rel_tol=float(header.get("rel_tol", conf["quad_rel_tol"])),
                      abs_tol=float(conf["quad_abs_tol"]))
    rng = np.random.default_rng(int(conf["seed"]))
    worst = 0.0
    checked = []
    for _ in range(int(conf["samples"])):
        k = tuple(int(v) for v in rng.integers(0, stencil.N + 1, stencil.d))
        if not any(k):
            k = (1,) + k[1:]
        fresh = coefficient_entry(stencil.params, stencil.N, stencil.h, k, quad)
        stored = stencil.entry(*k)
        rel = abs(fresh - stored) / abs(stored)
        worst = max(worst, rel)
        checked.append({"index": list(k), "stored": stored, "recomputed": fresh, "rel": rel})
    ok = worst <= 1e-12
    run.extra.update(checked=checked, worst_rel=worst, ok=ok)
    print(f"{len(checked)} entries, worst relative difference {worst:.3e}: "
          f"{'OK' if ok else 'MISMATCH'}")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"op-error": cmd_op_error, "poisson": cmd_poisson,
            "allen-cahn": cmd_allen_cahn, "stencil": cmd_stencil}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    handler = COMMANDS[args.command]
    try:
        conf = resolve(args)
        if conf.get("threads") is not None and int(conf["threads"]) < 1:
            raise UsageError("--threads must be at least 1")
        handler(conf)           # validation only, nothing written yet
    except UsageError as exc:
        print(f"fraclap {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if conf.get("threads"):
        set_fft_workers(int(conf["threads"]))
    run = Run(args.command, conf, argv)
    try:
        code = handler(conf, run)
    except FileFormatError as exc:
        print(f"fraclap {args.command}: {exc}", file=sys.stderr)
        run.extra["error"] = str(exc)
        run.finish("bad-input")
        return EXIT_FORMAT
    except (FracLapError, MemoryError) as exc:
        print(f"fraclap {args.command}: failed: {exc}", file=sys.stderr)
        run.extra["error"] = str(exc)
        if isinstance(exc, PicardNotConverged):
            run.extra.update(step=exc.step, increments=exc.increments)
        run.finish("failed")
        return EXIT_FAIL
    finally:
        set_fft_workers(None)
    run.finish("ok" if code == EXIT_OK else "failed")
    return code


if __name__ == "__main__":
    sys.exit(main())
