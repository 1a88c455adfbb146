"""Command-line front end.

Exit codes: 0 success, 1 mathematical failure (hypothesis, zero finding or
refinement), 2 input, output or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .builtins import BUILTIN_NAMES, ClosedFormLibrary, builtin_model
from .expr import ExpressionError, parse_expression
from .melnikov import melnikov_scan
from .model import (
    ModelError,
    PiecewiseSystem,
    SeedManifold,
    Tolerances,
    check_h1,
    dump_model,
    load_model,
)
from .validate import DEFAULT_EPS, ValidationError, convergence_study
from .zeros import (
    InfeasibleTargetError,
    ZeroTolerances,
    ect_check,
    find_simple_zeros,
    realize_zero_count,
)

EXIT_OK, EXIT_MATH, EXIT_CONFIG = 0, 1, 2
CLOSURE_LIMIT = 1e-8


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything a command needs, after flag parsing and model loading."""

    system: PiecewiseSystem | None
    seed: SeedManifold | None
    library: ClosedFormLibrary | None
    grid: int = 400
    tols: Tolerances = field(default_factory=Tolerances)
    ztols: ZeroTolerances = field(default_factory=ZeroTolerances)
    out: str | None = None
    targets: tuple[float, ...] = ()
    eps: tuple[float, ...] = DEFAULT_EPS
    options: dict = field(default_factory=dict)


# ---------------------------------------------------------------------- parsing helpers


def _floats(text: str, what: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from exc


def _pairs(items, what: str) -> dict[str, float]:
    out = {}
    for item in items or ():
        key, sep, val = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{what}: expected k=v, got {item!r}")
        try:
            out[key.strip()] = float(val)
        except ValueError as exc:
            raise ConfigError(f"{what}: {key.strip()} needs a number, got {val!r}") from exc
    return out


_TOL_FIELDS = [f.name for f in fields(Tolerances)]
_ZTOL_FIELDS = ["residual", "nd", "fd_step", "merge"]


def _tolerances(args) -> tuple[Tolerances, ZeroTolerances]:
    tol_kw = {k: getattr(args, f"tol_{k}") for k in _TOL_FIELDS if getattr(args, f"tol_{k}") is not None}
    z_kw = {k: getattr(args, f"tol_{k}") for k in _ZTOL_FIELDS if getattr(args, f"tol_{k}") is not None}
    for k, v in {**tol_kw, **z_kw}.items():
        if not v > 0:
            raise ConfigError(f"--tol-{k.replace('_', '-')} must be positive")
    try:
        tols = replace(Tolerances(), **{k: (int(v) if k == "max_steps" else v) for k, v in tol_kw.items()})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return tols, replace(ZeroTolerances(), **z_kw)


def _load(args) -> tuple[PiecewiseSystem, SeedManifold, ClosedFormLibrary | None]:
    params = _pairs(args.param, "--param")
    coeffs = _pairs(args.coeff, "--coeff")
    if args.builtin:
        system, seed, lib = builtin_model(args.builtin, params)
    else:
        system, seed = load_model(args.model)
        lib = None
        if params:
            system = system.with_params(**params)
    if coeffs:
        system = system.with_coefficients(coeffs)
    if args.v_box:
        vals = _floats(args.v_box, "--v-box")
        if len(vals) != 2 * seed.n:
            raise ConfigError(f"--v-box needs {2 * seed.n} numbers")
        seed = seed.with_box(tuple(zip(vals[0::2], vals[1::2])))
    return system, seed, lib


def _config(args) -> RunConfig:
    if args.builtin or args.model:
        system, seed, lib = _load(args)
    elif args.command == "ect" and getattr(args, "functions", None):
        system = seed = lib = None  # plain function list, no model involved
    else:
        raise ConfigError("one of --builtin or --model is required")
    tols, ztols = _tolerances(args)
    grid = getattr(args, "grid", 400)
    if grid < 16:
        raise ConfigError("--grid must be at least 16")
    eps = DEFAULT_EPS
    if getattr(args, "eps", None):
        eps = _floats(args.eps, "--eps")
        if any(e == 0 for e in eps):
            raise ConfigError("--eps values must be nonzero")
    targets = _floats(args.targets, "--targets") if getattr(args, "targets", None) else ()
    return RunConfig(system, seed, lib, grid, tols, ztols, args.out, targets, eps, vars(args))


# ---------------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(rows[0]))
    for r in rows:
        w.writerow([_fmt(v) for v in r.values()])
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _warn(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------- commands


def cmd_check_h1(cfg: RunConfig) -> int:
    reports = [check_h1(cfg.system, cfg.seed, u, cfg.tols) for u in cfg.seed.grid(cfg.grid)]
    rows = [{**r.as_row(), "message": r.message} for r in reports]
    _emit(rows_to_csv(rows), cfg.out)
    failed = [r for r in reports if not r.passed]
    if failed:
        _warn(f"(H1) fails at {len(failed)} of {len(reports)} nodes, first at u={failed[0].u}: {failed[0].message}")
        return EXIT_MATH
    return EXIT_OK


def cmd_melnikov(cfg: RunConfig) -> int:
    scan = melnikov_scan(cfg.system, cfg.seed, cfg.grid, cfg.tols)
    _emit(rows_to_csv(scan.rows()), cfg.out)
    bad = ~np.all(np.isfinite(scan.values), axis=1)
    if np.any(bad):
        for m in scan.messages[:5]:
            _warn(m)
        _warn(f"Melnikov function undefined at {int(bad.sum())} of {len(bad)} nodes")
        return EXIT_MATH
    return EXIT_OK


def _scale_fn(cfg: RunConfig):
    if cfg.library is None:
        return None
    return lambda u: cfg.library.value("scale", u)


def cmd_zeros(cfg: RunConfig) -> int:
    doc: dict = {"model": cfg.system.name}
    if cfg.targets:
        try:
            real = realize_zero_count(cfg.system, cfg.seed, cfg.targets, scale=_scale_fn(cfg),
                                      scan_nodes=cfg.grid, tols=cfg.tols, ztols=cfg.ztols)
        except InfeasibleTargetError as exc:
            _warn(str(exc))
            return EXIT_MATH
        certs = real.certificates
        doc.update(targets=list(real.targets), coefficients=real.coefficients, rank=real.rank,
                   fit_residual=real.fit_residual)
    else:
        scan = melnikov_scan(cfg.system, cfg.seed, cfg.grid, cfg.tols)
        certs = find_simple_zeros(scan, cfg.ztols, cfg.tols)
    doc["certificates"] = [c.as_dict() for c in certs]
    diag = getattr(certs, "diagnostic", "")
    if diag:
        doc["diagnostic"] = diag
    _emit(json.dumps(doc, indent=2) + "\n", cfg.out)
    if diag:
        _warn(diag)
    if any(not c.certified for c in certs):
        _warn("some zeros could not be certified")
        return EXIT_MATH
    return EXIT_MATH if diag and "degenerate" in diag else EXIT_OK


def _ect_functions(cfg: RunConfig):
    opts = cfg.options
    if opts.get("functions"):
        try:
            fs = [parse_expression(t.strip(), ("u",), {}) for t in opts["functions"].split(";") if t.strip()]
        except ExpressionError as exc:
            raise ConfigError(f"--functions: {exc}") from exc
        interval = opts.get("interval")
        if not interval:
            raise ConfigError("--functions needs --interval")
    else:
        if cfg.library is None:
            raise ConfigError("ect needs a built-in model or --functions")
        lib = cfg.library
        fs = lib.basis_exprs() if opts.get("basis") else lib.wronskian_exprs()
        interval = opts.get("interval")
        if not interval:
            if lib.wronskian_interval is None:
                raise ConfigError(f"{lib.name}: no default interval; pass --interval")
            return fs, tuple(lib.wronskian_interval)
    iv = _floats(interval, "--interval")
    if len(iv) != 2 or not iv[0] < iv[1]:
        raise ConfigError("--interval needs lo,hi with lo < hi")
    return fs, iv


def cmd_ect(cfg: RunConfig) -> int:
    fs, interval = _ect_functions(cfg)
    table = ect_check(fs, interval, samples=cfg.options.get("samples") or 200)
    _emit(rows_to_csv(table.rows()), cfg.out)
    for k, ok in enumerate(table.nonvanishing):
        _warn(f"W_{k}: {'nonvanishing' if ok else 'VANISHES or changes sign'} on {interval}")
    return EXIT_OK if table.is_ect else EXIT_MATH


def cmd_validate(cfg: RunConfig) -> int:
    u_stars = cfg.options.get("u_star")
    system = cfg.system
    if u_stars:
        zeros = [np.array([u]) for u in _floats(u_stars, "--u-star")]
    else:
        if cfg.targets:
            try:
                real = realize_zero_count(system, cfg.seed, cfg.targets, scale=_scale_fn(cfg),
                                          scan_nodes=cfg.grid, tols=cfg.tols, ztols=cfg.ztols)
            except InfeasibleTargetError as exc:
                _warn(str(exc))
                return EXIT_MATH
            system = system.with_coefficients(real.coefficients)
            certs = real.certificates
        else:
            certs = find_simple_zeros(melnikov_scan(system, cfg.seed, cfg.grid, cfg.tols), cfg.ztols, cfg.tols)
        zeros = [c.u_star for c in certs if c.certified]
        if not zeros:
            _warn("no certified zero to validate")
            return EXIT_MATH
    rows, status = [], EXIT_OK
    for k, u in enumerate(zeros):
        try:
            table = convergence_study(system, cfg.seed, u, cfg.eps, cfg.tols)
        except (ValidationError, ValueError) as exc:
            _warn(f"zero {k} at u={u}: {exc}")
            status = EXIT_MATH
            continue
        ratios = np.concatenate([[np.nan], table.ratios])
        for row, r in zip(table.rows(), ratios):
            rows.append({"zero": k, "u_star": float(u[0]), **row, "ratio": float(r)})
        if np.any(table.closure > CLOSURE_LIMIT):
            _warn(f"zero {k}: re-integrated orbit closes only to {table.closure.max():.3e}")
            status = EXIT_MATH
        if not table.monotone:
            _warn(f"zero {k}: distances are not monotone in eps")
    _emit(rows_to_csv(rows), cfg.out)
    return status


def cmd_dump_model(cfg: RunConfig) -> int:
    _emit(dump_model(cfg.system, cfg.seed) + "\n", cfg.out)
    return EXIT_OK


COMMANDS = {
    "check-h1": cmd_check_h1,
    "melnikov": cmd_melnikov,
    "zeros": cmd_zeros,
    "ect": cmd_ect,
    "validate": cmd_validate,
    "dump-model": cmd_dump_model,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--builtin", choices=BUILTIN_NAMES, help="built-in example system")
    src.add_argument("--model", help="model JSON file")
    common.add_argument("--param", action="append", metavar="K=V", help="set a model parameter")
    common.add_argument("--coeff", action="append", metavar="K=V", help="set a perturbation coefficient")
    common.add_argument("--grid", type=int, default=400, help="number of nodes on the seed box")
    common.add_argument("--v-box", metavar="LO,HI[,...]", help="override the seed box")
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("--targets", metavar="R1,R2,...", help="realize zeros at these u values")
    common.add_argument("--eps", metavar="E1,E2,...", help="eps sweep for validate")
    defaults = Tolerances()
    for name in _TOL_FIELDS:
        common.add_argument(f"--tol-{name.replace('_', '-')}", dest=f"tol_{name}", type=float,
                            help=f"default {getattr(defaults, name)}")
    zdefaults = ZeroTolerances()
    for name in _ZTOL_FIELDS:
        common.add_argument(f"--tol-{name.replace('_', '-')}", dest=f"tol_{name}", type=float,
                            help=f"zero certification, default {getattr(zdefaults, name)}")

    parser = argparse.ArgumentParser(prog="pwmel", description="Melnikov analysis of piecewise-smooth systems")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("check-h1", parents=[common], help="test the crossing-orbit hypothesis on the seed grid")
    sub.add_parser("melnikov", parents=[common], help="scan the Melnikov function (CSV)")
    sub.add_parser("zeros", parents=[common], help="certify simple zeros (JSON)")
    p = sub.add_parser("ect", parents=[common], help="sampled Wronskian / ECT check (CSV)")
    p.add_argument("--functions", help="';'-separated expressions in u")
    p.add_argument("--interval", metavar="LO,HI")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--basis", action="store_true", help="use the Melnikov basis instead of the Wronskian family")
    p = sub.add_parser("validate", parents=[common], help="refine perturbed periodic orbits along an eps sweep (CSV)")
    p.add_argument("--u-star", metavar="U1,U2,...", help="zeros to validate instead of searching")
    sub.add_parser("dump-model", parents=[common], help="write the model as JSON")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ModelError, ExpressionError, OSError) as exc:
        _warn(f"error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
