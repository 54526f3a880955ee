"""Command-line front end.

Usage::

    gwtransport flow      [--config FILE] [options]
    gwtransport transport [--config FILE] [options]
    gwtransport adapt     [--config FILE] [options]
    gwtransport bench {john,lopez,forward2d} [--config FILE] [options]
    gwtransport compare RUN_DIR RUN_DIR [...] [--output DIR]
    gwtransport run {forward2d,john,lopez} [options]     # same as 'transport'
    gwtransport run bench {john,lopez,forward2d} [options]

Exit codes: 0 success, 2 a linear solve did not converge, 3 configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import difflib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .adapt import AdaptConfig, adaptive_solve
from .bench import (METHODS, convergence_study, build_scenario, forward2d_scenario, john_problem, l2_error,
                    lopez_problem, solve_method)
from .field import save_field_csv, well_rates
from .fem_core import UnsupportedSpaceError
from .linalg import SOLVERS
from .postprocess import compare_ranges, level_crossing, sample_line
from .transport.coeffs import ZETA, mesh_peclet
from .transport.problem import ORDERINGS
from .vtk import write_field, write_flow

log = logging.getLogger("gwtransport")

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3
OUTPUT_ENV = "GWTRANSPORT_OUTPUT"
SCENARIOS = ("forward2d", "john", "lopez")

DEFAULTS = {
    "run": {"scenario": "forward2d", "output": "", "seed": "0"},
    "grid": {"scale": "desk", "n0": "8"},
    "problem": {"eps": "1e-5", "r0": "5e-5", "wells": "true"},
    "method": {"method": "dg", "degree": "1", "degrees": "1,3", "zeta": "upwind", "c_gamma": "10"},
    "refinement": {"mode": "global", "levels": "5", "p_r": "20", "p_c": "10", "tol": "0", "l_max": "5",
                   "p_osc": "0.01", "dof_cap": "5000000"},
    "solver": {"solver": "bicgstab", "preconditioner": "ilu0", "reduction": "1e-8", "max_iter": "5000",
               "ordering": "downwind", "ordering_seed": "0"},
    "output": {"vtk": "true", "cut_start": "", "cut_end": "", "cut_points": "201"},
}

# command-line flag -> section.key
FLAGS = {
    "scenario": "run.scenario", "output": "run.output", "seed": "run.seed",
    "scale": "grid.scale", "n0": "grid.n0", "eps": "problem.eps",
    "method": "method.method", "degree": "method.degree", "degrees": "method.degrees",
    "refinement": "refinement.mode", "levels": "refinement.levels", "p_r": "refinement.p_r",
    "p_c": "refinement.p_c", "l_max": "refinement.l_max", "p_osc": "refinement.p_osc",
    "solver": "solver.solver", "preconditioner": "solver.preconditioner", "reduction": "solver.reduction",
    "ordering": "solver.ordering", "ordering_seed": "solver.ordering_seed",
}


class ConfigError(ValueError):
    pass


# configuration ------------------------------------------------------------------------------

def _all_keys() -> list[str]:
    return [f"{s}.{k}" for s, keys in DEFAULTS.items() for k in keys]


def _unknown(key: str) -> ConfigError:
    close = difflib.get_close_matches(key, _all_keys(), n=1)
    hint = f"; did you mean {close[0]!r}?" if close else ""
    return ConfigError(f"unknown configuration key {key!r}{hint}")


def load_config(path=None, overrides: dict | None = None) -> configparser.ConfigParser:
    """Defaults, then the file, then ``overrides`` ({'section.key': value})."""
    cfg = configparser.ConfigParser(interpolation=None)
    cfg.read_dict(DEFAULTS)
    if path is not None:
        user = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                user.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for sec in user.sections():
            for key, val in user[sec].items():
                if sec not in DEFAULTS or key not in DEFAULTS[sec]:
                    raise _unknown(f"{sec}.{key}")
                cfg[sec][key] = val
    for dotted, val in (overrides or {}).items():
        sec, _, key = dotted.partition(".")
        if sec not in DEFAULTS or key not in DEFAULTS[sec]:
            raise _unknown(dotted)
        cfg[sec][key] = str(val)
    return cfg


class Settings:
    """Typed, validated view of a resolved configuration."""

    def __init__(self, cfg: configparser.ConfigParser):
        self.cfg = cfg
        try:
            self._parse(cfg)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def _parse(self, cfg):
        g = cfg.get
        self.scenario = g("run", "scenario")
        self.output = g("run", "output")
        self.seed = cfg.getint("run", "seed")
        self.scale = g("grid", "scale")
        self.n0 = cfg.getint("grid", "n0")
        self.eps = cfg.getfloat("problem", "eps")
        self.r0 = cfg.getfloat("problem", "r0")
        self.wells = cfg.getboolean("problem", "wells")
        self.method = g("method", "method")
        self.degree = cfg.getint("method", "degree")
        self.degrees = [int(v) for v in g("method", "degrees").split(",") if v.strip()]
        self.zeta = g("method", "zeta")
        self.c_gamma = cfg.getfloat("method", "c_gamma")
        self.mode = g("refinement", "mode")
        self.levels = cfg.getint("refinement", "levels")
        self.adapt = AdaptConfig(cfg.getfloat("refinement", "p_r"), cfg.getfloat("refinement", "p_c"),
                                 cfg.getfloat("refinement", "tol"), cfg.getint("refinement", "l_max"),
                                 cfg.getfloat("refinement", "p_osc"), None,
                                 cfg.getint("refinement", "dof_cap"))
        self.solver = g("solver", "solver")
        self.preconditioner = g("solver", "preconditioner")
        self.reduction = cfg.getfloat("solver", "reduction")
        self.max_iter = cfg.getint("solver", "max_iter")
        self.ordering = g("solver", "ordering")
        self.ordering_seed = cfg.getint("solver", "ordering_seed")
        self.vtk = cfg.getboolean("output", "vtk")
        self.cut_points = cfg.getint("output", "cut_points")
        self.cut_start = _point(g("output", "cut_start"))
        self.cut_end = _point(g("output", "cut_end"))

        _choice("run.scenario", self.scenario, SCENARIOS)
        _choice("grid.scale", self.scale, ("desk", "paper"))
        _choice("method.method", self.method, METHODS)
        _choice("method.zeta", self.zeta, tuple(ZETA))
        _choice("refinement.mode", self.mode, ("global", "adaptive"))
        _choice("solver.solver", self.solver, tuple(SOLVERS))
        _choice("solver.preconditioner", self.preconditioner, ("ssor", "ilu0", "none"))
        _choice("solver.ordering", self.ordering, ORDERINGS)
        if self.method == "sdfem" and self.degree != 1:
            raise ConfigError("sdfem is implemented for degree 1 only")
        if self.degree < 1 or any(k < 1 for k in self.degrees):
            raise ConfigError(f"polynomial degree must be >= 1 (got {self.degree})")
        if self.levels < 1 or self.n0 < 1:
            raise ConfigError("refinement.levels and grid.n0 must be >= 1")
        if not 0 < self.reduction < 1:
            raise ConfigError("solver.reduction must lie in (0, 1)")
        if self.mode == "adaptive" and self.method == "dg+l2":
            raise ConfigError("dg+l2 needs a mesh without hanging nodes; use refinement.mode = global")
        if (self.cut_start is None) != (self.cut_end is None):
            raise ConfigError("output.cut_start and output.cut_end must be given together")

    @property
    def solver_kw(self) -> dict:
        prec = None if self.preconditioner == "none" else self.preconditioner
        return dict(ordering=self.ordering, solver=self.solver, preconditioner=prec,
                    reduction=self.reduction, seed=self.ordering_seed, max_iter=self.max_iter)

    def assemble_kw(self, method: str) -> dict:
        return {"zeta": self.zeta} if method == "sdfem" else {}


def _choice(key, value, allowed):
    if value not in allowed:
        close = difflib.get_close_matches(value, list(allowed), n=1)
        hint = f"; did you mean {close[0]!r}?" if close else ""
        raise ConfigError(f"{key} = {value!r} is not one of {', '.join(allowed)}{hint}")


def _point(text: str):
    text = text.strip()
    if not text:
        return None
    try:
        return np.array([float(v) for v in text.replace(";", ",").split(",")])
    except ValueError as exc:
        raise ConfigError(f"cannot parse point {text!r}") from exc


# output helpers ------------------------------------------------------------------------------

def output_dir(settings: Settings, command: str) -> Path:
    if settings.output:
        out = Path(settings.output)
    else:
        out = Path(os.environ.get(OUTPUT_ENV, "runs")) / f"{command}-{settings.scenario}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, settings: Settings, command: str, argv) -> None:
    with open(out / "config.ini", "w") as fh:
        settings.cfg.write(fh)
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": {s: dict(settings.cfg[s]) for s in settings.cfg.sections()},
        "versions": {"gwtransport": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _write_rows(path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(v) for k, v in r.items()})


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10e}"
    return v


def _default_cut(extent):
    # anti-diagonal of the domain, (0, top) -> (right, 0)
    return np.array([0.0, extent[1]]), np.array([extent[0], 0.0])


def write_cutline(path, fields: dict, start, end, n) -> dict:
    cols, crossings = {}, {}
    s = None
    for name, f in fields.items():
        s, v = sample_line(f, start, end, n)
        cols[name] = v
    rows = [{"s": s[i], **{k: cols[k][i] for k in cols}} for i in range(n)]
    _write_rows(path, rows)
    with open(Path(path).with_suffix(".json"), "w") as fh:
        json.dump({"start": list(map(float, start)), "end": list(map(float, end)), "points": n}, fh)
    for name in cols:
        crossings[name] = level_crossing(s, cols[name], 0.5 * (np.nanmax(cols[name]) + np.nanmin(cols[name])))
    return crossings


# problem setup --------------------------------------------------------------------------------

def _problem(settings: Settings):
    """(transport problem, analytic problem or None, scenario setup or None, extent)."""
    if settings.scenario == "forward2d":
        setup = build_scenario(forward2d_scenario(settings.scale, settings.seed, settings.wells))
        setup.problem.c_gamma = settings.c_gamma
        return setup.problem, None, setup, setup.spec.grid.extents
    prob = john_problem(settings.eps) if settings.scenario == "john" else lopez_problem(settings.eps, settings.r0)
    tp = prob.transport_problem(settings.n0)
    tp.c_gamma = settings.c_gamma
    return tp, prob, None, (1.0, 1.0)


# commands ---------------------------------------------------------------------------------------

def cmd_flow(settings: Settings, out: Path) -> int:
    if settings.scenario != "forward2d":
        raise ConfigError("the flow command runs the forward2d scenario only")
    setup = build_scenario(forward2d_scenario(settings.scale, settings.seed, settings.wells))
    mesh = setup.mesh
    if settings.vtk:
        write_flow(out / "flow.vtk", mesh, setup.head, setup.velocity, setup.conductivity)
    save_field_csv(out / "logk.csv", setup.conductivity.Y, setup.spec.grid)
    cells = mesh.leaves
    q = setup.velocity(mesh.cell_center(cells), cells)
    pe = mesh_peclet(np.linalg.norm(q, axis=1), mesh.cell_diameter(cells), setup.problem.coeffs)
    w_inj, w_ext = well_rates(setup.spec.grid, setup.spec.wells)
    imbalance = np.abs(setup.velocity.divergence(cells) - (w_inj - w_ext)[cells])
    qmax = np.abs(setup.head.face_flux).max()
    h = float(setup.spec.grid.spacing.min())
    _write_rows(out / "flow.csv", [{
        "cells": cells.size, "head_min": setup.head.values.min(), "head_max": setup.head.values.max(),
        "max_face_flux": qmax, "max_mass_imbalance": imbalance.max(),
        "imbalance_ratio": imbalance.max() / (qmax / h), "maxPeclet": pe.max(),
    }])
    return EXIT_OK


def cmd_transport(settings: Settings, out: Path) -> int:
    tp, prob, setup, extent = _problem(settings)
    mesh = tp.mesh
    u, u_dg, system, rep = solve_method(tp, mesh, settings.method, settings.degree, **settings.solver_kw,
                                        **settings.assemble_kw(settings.method))
    fields = {}
    if settings.method == "sdfem":
        fields["u_cg"] = u
    elif settings.method == "dg":
        fields["u_dg"] = u
    else:
        fields["u_dg"], fields["u_cg"] = u_dg, u
    if settings.vtk:
        for name, f in fields.items():
            write_field(out / f"{name}.vtk", f, "u")
    rows = compare_ranges(fields, tp.u_hat)
    for r in rows:
        if prob is not None:
            r["l2_error"] = l2_error(fields[r["field"]], prob.u, prob.excluded)
        r["IT"] = rep.iterations
        r["converged"] = rep.converged
    _write_rows(out / "ranges.csv", rows)
    _write_rows(out / "timings.csv", [{"T_assemble": system.assembly_time, "T_solve": rep.wall_time}])
    start, end = (settings.cut_start, settings.cut_end) if settings.cut_start is not None else _default_cut(extent)
    write_cutline(out / "cutline.csv", fields, start, end, settings.cut_points)
    return EXIT_OK if rep.converged else EXIT_SOLVER


def cmd_adapt(settings: Settings, out: Path) -> int:
    if settings.method == "dg+l2":
        raise ConfigError("adaptive runs support sdfem and dg")
    tp, prob, setup, extent = _problem(settings)
    res = adaptive_solve(tp, settings.adapt, settings.method, settings.degree, **settings.solver_kw,
                         **settings.assemble_kw(settings.method))
    res.write_trace(out / "trace.csv", out / "timings.csv")
    name = "u_cg" if settings.method == "sdfem" else "u_dg"
    if settings.vtk:
        write_field(out / f"{name}.vtk", res.solution, "u")
    _write_rows(out / "ranges.csv", compare_ranges({name: res.solution}, tp.u_hat))
    log.info("adaptive loop stopped: %s after %d levels", res.stop_reason, len(res.trace))
    return EXIT_OK if res.stop_reason != "solver" else EXIT_SOLVER


def cmd_bench(settings: Settings, out: Path, which: str) -> int:
    settings.scenario = which
    if which == "forward2d":
        return _bench_forward2d(settings, out)
    _, prob, _, _ = _problem(settings)
    table = convergence_study(prob, settings.method, settings.degree, settings.levels, settings.n0,
                              refinement=settings.mode, adapt_config=settings.adapt, **settings.solver_kw)
    table.to_csv(out / "convergence.csv", out / "timings.csv")
    return EXIT_OK if all(r.converged for r in table.rows) else EXIT_SOLVER


def _bench_forward2d(settings: Settings, out: Path) -> int:
    tp, _, setup, extent = _problem(settings)
    rows, timings, fields = [], [], {}
    ok = True
    runs = [("sdfem", 1)] + [(m, k) for k in settings.degrees for m in ("dg", "dg+l2")]
    for method, k in runs:
        label = "sdfem" if method == "sdfem" else f"{method}({k})"
        u, u_dg, system, rep = solve_method(tp, tp.mesh, method, k, **settings.solver_kw,
                                            **settings.assemble_kw(method))
        ok &= rep.converged
        fields[label] = u
        r = compare_ranges({label: u}, tp.u_hat)[0]
        r.update({"IT": rep.iterations, "converged": rep.converged})
        rows.append(r)
        timings.append({"field": label, "T_assemble": system.assembly_time, "T_solve": rep.wall_time})
        if settings.vtk:
            write_field(out / f"{label.replace('+', '_').replace('(', '').replace(')', '')}.vtk", u, "u")
    _write_rows(out / "compare.csv", rows)
    _write_rows(out / "timings.csv", timings)
    start, end = (settings.cut_start, settings.cut_end) if settings.cut_start is not None else _default_cut(extent)
    write_cutline(out / "cutline.csv", fields, start, end, settings.cut_points)
    return EXIT_OK if ok else EXIT_SOLVER


def cmd_compare(dirs, out: Path) -> int:
    if len(dirs) < 2:
        raise ConfigError("compare needs at least two run directories")
    tables, lines, ranges = [], [], []
    for d in map(Path, dirs):
        cut = d / "cutline.csv"
        if not cut.is_file():
            raise ConfigError(f"{d}: no cutline.csv (missing or not a run directory)")
        with open(cut.with_suffix(".json")) as fh:
            lines.append(json.load(fh))
        with open(cut) as fh:
            tables.append(list(csv.DictReader(fh)))
        rng = d / "ranges.csv"
        if not rng.is_file():
            rng = d / "compare.csv"
        if rng.is_file():
            with open(rng) as fh:
                for r in csv.DictReader(fh):
                    ranges.append({"run": d.name, "field": r["field"], "u_min": r["u_min"],
                                   "u_max": r["u_max"], "overshoot": r["overshoot"]})
    if any(ln != lines[0] for ln in lines[1:]):
        raise ConfigError("cut lines differ between runs")
    rows = []
    for i in range(len(tables[0])):
        row = {"s": tables[0][i]["s"]}
        for d, t in zip(dirs, tables):
            for key, val in t[i].items():
                if key != "s":
                    row[f"{Path(d).name}:{key}"] = val
        rows.append(row)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "comparison.csv", rows)
    _write_rows(out / "comparison_ranges.csv", ranges)
    return EXIT_OK


# argument parsing -----------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any configuration key (repeatable)")
    for flag, dotted in FLAGS.items():
        p.add_argument("--" + flag.replace("_", "-"), dest=flag, default=None, help=f"sets {dotted}")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gwtransport", description="Groundwater flow and solute transport solver")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("flow", "transport", "adapt"):
        _add_common(sub.add_parser(name))
    b = sub.add_parser("bench")
    b.add_argument("which", choices=SCENARIOS)
    _add_common(b)
    c = sub.add_parser("compare")
    c.add_argument("runs", nargs="+")
    c.add_argument("--output", default=None)
    r = sub.add_parser("run", help="'run SCENARIO' = transport, 'run bench NAME' = bench")
    r.add_argument("target", nargs="+")
    _add_common(r)
    return parser


def _overrides(args) -> dict:
    ov = {}
    for flag, dotted in FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            ov[dotted] = val
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        ov[key.strip()] = val.strip()
    return ov


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "compare":
            out = Path(args.output or os.environ.get(OUTPUT_ENV, "runs")) / "compare" if not args.output \
                else Path(args.output)
            return cmd_compare(args.runs, out)
        command, which = args.command, getattr(args, "which", None)
        ov = _overrides(args)
        if command == "run":
            if args.target[0] == "bench":
                if len(args.target) != 2:
                    raise ConfigError("usage: run bench {john,lopez,forward2d}")
                command, which = "bench", args.target[1]
                _choice("bench", which, SCENARIOS)
            else:
                if len(args.target) != 1:
                    raise ConfigError("usage: run {forward2d,john,lopez}")
                command = "transport"
                ov["run.scenario"] = args.target[0]
        settings = Settings(load_config(args.config, ov))
        if which is not None:
            settings.scenario = which
            settings.cfg["run"]["scenario"] = which
        out = output_dir(settings, command)
        write_manifest(out, settings, command, argv)
        if command == "flow":
            return cmd_flow(settings, out)
        if command == "transport":
            return cmd_transport(settings, out)
        if command == "adapt":
            return cmd_adapt(settings, out)
        return cmd_bench(settings, out, which)
    except (ConfigError, UnsupportedSpaceError) as exc:
        print(f"gwtransport: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
