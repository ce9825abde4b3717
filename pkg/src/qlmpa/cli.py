"""Command-line front-end: solves, sweeps and file exports.

Subcommands: solve, sweep-domain, sweep-p, bifurcation, double-well.
Options may come from a flat key=value config file (--config); explicit
flags override file keys, and unknown file keys are rejected.  Every run
writes a manifest with the fully resolved configuration and sha256
checksums of the outputs; the manifest itself is a valid config file, so
re-running from it reproduces the outputs.
"""

import argparse
import hashlib
import logging
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .experiments import (MeshSchedule, SweepSpec, run_bifurcation,
                          run_domain_sweep, run_double_well, run_p_sweep,
                          solve_problem)
from .fem import FeFunction
from .model import Nonlinearity, Potential, Problem
from .mpa import ReportRow

log = logging.getLogger(__name__)

CSV_HEADER = "R,p,V,delta,eps_sc,max_v,grad_v_l2,max_u,energy,grad_norm,iters"

SUBCOMMANDS = ("solve", "sweep-domain", "sweep-p", "bifurcation", "double-well")


@dataclass
class RunConfig:
    """Fully resolved options of one CLI invocation."""

    subcommand: str
    R: float = 5.0
    p: str = "4"                  # exponent or "exp"
    V: str = "0"                  # level or "doublewell"
    delta: float = 2.0
    eps_sc: float = 1.0
    n: int = 0                    # 0: per-study resolution policy
    grad_tol: float = 1e-2
    max_iter: int = 1000
    newton_iters: int = 8
    refine_every: int = -1        # -1: policy default
    refine_fraction: float = 0.2
    s_max: float = 50.0
    guess: str = "default"
    guess_cx: float = 0.3
    guess_cy: float = -0.2
    R_list: str = "1,5,10,30"
    p_list: str = ""              # empty: 13 points in [4, 7]
    delta_list: str = "0,1,2"
    V_list: str = "0.1,0.25,0.5,1,2,3,4,5,6,7,8,9,10"
    eps_list: str = "0.05,0.25"
    cold_start: bool = False
    workers: int = 1
    outdir: str = "out"


_HELP = {
    "R": "domain side length (Omega_R = (-R/2, R/2)^2)",
    "p": "power exponent (> 1) or 'exp' for the exponential nonlinearity",
    "V": "constant potential level (>= 0) or 'doublewell'",
    "delta": "change-of-variable parameter (2 quasi-linear, 0 Lane-Emden)",
    "eps_sc": "semiclassical scale multiplying the differential operator",
    "n": "mesh cells per side (0 uses the per-study resolution policy)",
    "grad_tol": "stop when the H1_0 gradient norm drops below this",
    "max_iter": "iteration budget of the mountain pass loop",
    "newton_iters": "Newton polish iterations after the MPA stops",
    "refine_every": "adaptive refinement cadence (0 off, -1 policy default)",
    "refine_fraction": "fraction of triangles bisected per refinement",
    "s_max": "upper end of the stepsize line search",
    "guess": "initial guess: 'default' or 'localized'",
    "guess_cx": "x-center of the localized guess",
    "guess_cy": "y-center of the localized guess",
    "R_list": "comma-separated R grid (sweep-domain)",
    "p_list": "comma-separated p grid (sweep-p); empty = 13 points in [4,7]",
    "delta_list": "comma-separated delta values (sweep-p)",
    "V_list": "comma-separated V grid (bifurcation)",
    "eps_list": "comma-separated eps values (double-well)",
    "cold_start": "disable warm-start continuation in the bifurcation sweep",
    "workers": "parallel processes for independent sweep points",
    "outdir": "output directory",
}


class ConfigError(Exception):
    """Invalid command line or config file; message lists all violations."""


def _parse_config_file(path):
    values = {}
    known = {f.name for f in fields(RunConfig)}
    errors = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"{path}:{lineno}: expected 'key = value'")
            continue
        key, val = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key.startswith("checksum."):
            continue  # manifest bookkeeping, not configuration
        if key not in known:
            errors.append(f"{path}:{lineno}: unknown key {key!r}")
            continue
        values[key] = val
    if errors:
        raise ConfigError("; ".join(errors))
    return values


def _coerce(name, text, kind, errors):
    try:
        if kind is bool:
            if isinstance(text, bool):
                return text
            return str(text).strip().lower() in ("1", "true", "yes", "on")
        return kind(text)
    except (TypeError, ValueError):
        errors.append(f"{name}: cannot parse {text!r} as {kind.__name__}")
        return None


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qlmpa",
        description="Mountain-pass ground states of quasi-linear Schrodinger "
                    "equations on square domains.",
        epilog="Flags override --config file keys. Defaults: "
               + ", ".join(f"{f.name}={f.default!r}" for f in fields(RunConfig)
                           if f.name != "subcommand"))
    parser.add_argument("subcommand", nargs="?", choices=SUBCOMMANDS,
                        help="what to run (may also come from --config)")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--verbose", action="store_true",
                        help="log per-iteration progress")
    for f in fields(RunConfig):
        if f.name == "subcommand":
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool" or isinstance(f.default, bool):
            parser.add_argument(flag, action="store_const", const="true",
                                default=None, help=_HELP.get(f.name, ""))
        else:
            parser.add_argument(flag, default=None, metavar="X",
                                help=_HELP.get(f.name, ""))
    return parser


def parse_config(argv) -> RunConfig:
    """Resolve argv plus optional config file into a validated RunConfig."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    file_vals = _parse_config_file(ns.config) if ns.config else {}

    errors = []
    resolved = {}
    for f in fields(RunConfig):
        if f.name == "subcommand":
            continue
        kind = type(f.default)
        flag_val = getattr(ns, f.name)
        if flag_val is not None:
            value = _coerce(f.name, flag_val, kind, errors)
        elif f.name in file_vals:
            value = _coerce(f.name, file_vals[f.name], kind, errors)
        else:
            value = f.default
        resolved[f.name] = value

    sub = ns.subcommand or file_vals.get("subcommand")
    if sub not in SUBCOMMANDS:
        errors.append(f"subcommand must be one of {', '.join(SUBCOMMANDS)}; "
                      f"got {sub!r}")

    cfg = None
    if not errors:
        cfg = RunConfig(subcommand=sub, **resolved)
        errors.extend(_validate(cfg))
    if errors:
        raise ConfigError("invalid configuration: " + "; ".join(errors))
    return cfg


def _validate(cfg: RunConfig):
    errors = []
    if cfg.R <= 0:
        errors.append("R must be positive")
    if cfg.p != "exp":
        try:
            if float(cfg.p) <= 1:
                errors.append("p must exceed 1")
        except ValueError:
            errors.append(f"p must be a number or 'exp', got {cfg.p!r}")
    if cfg.V != "doublewell":
        try:
            if float(cfg.V) < 0:
                errors.append("V must be nonnegative")
        except ValueError:
            errors.append(f"V must be a number or 'doublewell', got {cfg.V!r}")
    if cfg.delta < 0:
        errors.append("delta must be nonnegative")
    if cfg.eps_sc <= 0:
        errors.append("eps_sc must be positive")
    if cfg.n < 0:
        errors.append("n must be nonnegative")
    if cfg.grad_tol <= 0:
        errors.append("grad_tol must be positive")
    if not 0 <= cfg.refine_fraction <= 1:
        errors.append("refine_fraction must lie in [0, 1]")
    if cfg.s_max <= 0:
        errors.append("s_max must be positive")
    if cfg.guess not in ("default", "localized"):
        errors.append("guess must be 'default' or 'localized'")
    if cfg.workers < 1:
        errors.append("workers must be at least 1")
    return errors


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def export_report(rows, path):
    """Full-precision CSV of report rows; refuses an empty list."""
    if not rows:
        raise ValueError("no report rows to export")
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(",".join([
            _fmt(r.R), r.p_or_exp, r.V_label, _fmt(r.delta), _fmt(r.eps_sc),
            _fmt(r.max_v), _fmt(r.grad_v_l2), _fmt(r.max_u), _fmt(r.energy),
            _fmt(r.grad_norm), str(r.iterations)]))
    Path(path).write_text("\n".join(lines) + "\n")
    return path


def parse_report(path):
    """Inverse of export_report, for round trips and downstream tooling."""
    lines = Path(path).read_text().strip().splitlines()
    if lines[0] != CSV_HEADER:
        raise ValueError(f"unexpected report header in {path}")
    rows = []
    for line in lines[1:]:
        c = line.split(",")
        rows.append(ReportRow(R=float(c[0]), p_or_exp=c[1], V_label=c[2],
                              delta=float(c[3]), eps_sc=float(c[4]),
                              max_v=float(c[5]), grad_v_l2=float(c[6]),
                              max_u=float(c[7]), energy=float(c[8]),
                              grad_norm=float(c[9]), iterations=int(c[10])))
    return rows


def export_field(v: FeFunction, u: FeFunction, path):
    """Legacy-VTK ASCII dump of v and u, plus a gnuplot 'x y v u' file."""
    if u.mesh is not v.mesh:
        raise ValueError("v and u must live on the same mesh")
    msh = v.mesh
    path = Path(path)
    out = [
        "# vtk DataFile Version 2.0",
        "mountain pass solution fields",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {msh.n_nodes} double",
    ]
    out.extend(f"{x:.17g} {y:.17g} 0" for x, y in msh.nodes)
    out.append(f"CELLS {msh.n_triangles} {4 * msh.n_triangles}")
    out.extend(f"3 {i} {j} {k}" for i, j, k in msh.triangles)
    out.append(f"CELL_TYPES {msh.n_triangles}")
    out.extend("5" for _ in range(msh.n_triangles))
    out.append(f"POINT_DATA {msh.n_nodes}")
    for name, fn in (("v", v), ("u", u)):
        out.append(f"SCALARS {name} double 1")
        out.append("LOOKUP_TABLE default")
        out.extend(f"{val:.17g}" for val in fn.values)
    path.write_text("\n".join(out) + "\n")

    datpath = path.with_suffix(".dat")
    with open(datpath, "w") as fh:
        for (x, y), a, b in zip(msh.nodes, v.values, u.values):
            fh.write(f"{x:.17g} {y:.17g} {a:.17g} {b:.17g}\n")
    return path


def export_curves(series, outdir):
    """One two-column .dat file per labeled series; returns the paths."""
    if not series:
        raise ValueError("no curve series to export")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for label, (xs, ys) in series.items():
        p = outdir / f"{label}.dat"
        with open(p, "w") as fh:
            for x, y in zip(xs, ys):
                fh.write(f"{x:.17g} {y:.17g}\n")
        paths.append(p)
    return paths


def write_iteration_log(result, path):
    """One 'iter T grad_norm s_n nodes' line per accepted iteration."""
    with open(path, "w") as fh:
        for rec in result.history:
            fh.write(f"{rec.iteration} {rec.energy:.17g} {rec.grad_norm:.17g} "
                     f"{rec.step:.17g} {rec.n_nodes}\n")
    return path


def _sha256(path):
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def write_manifest(cfg: RunConfig, outputs, outdir):
    """Resolved config plus output checksums; itself a loadable config."""
    lines = [f"subcommand = {cfg.subcommand}"]
    for f in fields(RunConfig):
        if f.name == "subcommand":
            continue
        lines.append(f"{f.name} = {_fmt(getattr(cfg, f.name))}")
    for path in sorted(outputs, key=str):
        lines.append(f"checksum.{Path(path).name} = {_sha256(path)}")
    path = Path(outdir) / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def _floats(text):
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _nonlinearity(cfg):
    return (Nonlinearity.exponential() if cfg.p == "exp"
            else Nonlinearity.power(float(cfg.p)))


def _potential(cfg):
    return (Potential.double_well() if cfg.V == "doublewell"
            else Potential.constant(float(cfg.V)))


def _schedule(cfg, policy: MeshSchedule) -> MeshSchedule:
    """Apply explicit numeric overrides on top of a per-study policy."""
    sched = MeshSchedule(**vars(policy))
    if cfg.n > 0:
        sched.n = cfg.n
    if cfg.refine_every >= 0:
        sched.refine_every = cfg.refine_every
    sched.refine_fraction = cfg.refine_fraction
    sched.s_max = cfg.s_max
    sched.grad_tol = cfg.grad_tol
    sched.max_iter = cfg.max_iter
    sched.newton_iters = cfg.newton_iters
    return sched


def _report_line(label, out):
    if out.error is not None:
        return f"{label}: FAILED ({out.error})"
    r = out.row
    state = "ok" if out.ok else "NOT CONVERGED"
    return (f"{label}: {state} T={r.energy:.6g} max_v={r.max_v:.4g} "
            f"max_u={r.max_u:.4g} |grad T|={r.grad_norm:.2e} "
            f"iters={r.iterations}")


def _cmd_solve(cfg, outdir):
    from .experiments import table_schedule
    problem = Problem(_nonlinearity(cfg), _potential(cfg), delta=cfg.delta,
                      eps_sc=cfg.eps_sc, R=cfg.R)
    sched = _schedule(cfg, table_schedule(cfg.R))
    guess = cfg.guess
    result = solve_problem(problem, sched, guess)
    outputs = [
        export_report([result.report], outdir / "report.csv"),
        export_field(result.solution_v, result.solution_u, outdir / "solution.vtk"),
        (outdir / "solution.dat"),
        write_iteration_log(result, outdir / "iterations.log"),
    ]
    print(_report_line("solve", _as_outcome(result)))
    return outputs, result.converged


def _as_outcome(result):
    from .experiments import RunOutcome
    return RunOutcome("run", row=result.report, result=result)


def _cmd_sweep_domain(cfg, outdir):
    spec = SweepSpec.domain(_nonlinearity(cfg), _potential(cfg),
                            R_values=_floats(cfg.R_list), delta=cfg.delta,
                            eps_sc=cfg.eps_sc, workers=cfg.workers,
                            schedule=None)
    if cfg.n > 0:
        spec.schedule = _schedule(cfg, MeshSchedule(n=cfg.n))
    outcomes = run_domain_sweep(spec)
    outputs = []
    rows = []
    ok = True
    for R, out in zip(spec.R_values, outcomes):
        print(_report_line(f"R={R:g}", out))
        ok &= out.ok
        if out.result is not None:
            rows.append(out.row)
            tag = f"R{R:g}"
            outputs.append(export_field(out.result.solution_v,
                                        out.result.solution_u,
                                        outdir / f"solution_{tag}.vtk"))
            outputs.append(outdir / f"solution_{tag}.dat")
            outputs.append(write_iteration_log(out.result,
                                               outdir / f"iterations_{tag}.log"))
    if rows:
        outputs.insert(0, export_report(rows, outdir / "report.csv"))
    return outputs, ok


def _cmd_sweep_p(cfg, outdir):
    p_values = _floats(cfg.p_list) if cfg.p_list else tuple(np.linspace(4.0, 7.0, 13))
    spec = SweepSpec.p_sweep(V=float(cfg.V), p_values=p_values,
                             deltas=_floats(cfg.delta_list),
                             eps_sc=cfg.eps_sc, workers=cfg.workers)
    if cfg.n > 0:
        spec.schedule = _schedule(cfg, MeshSchedule(n=cfg.n))
    curves, outcomes = run_p_sweep(spec)
    ok = True
    rows = []
    for out in outcomes:
        print(_report_line(out.label, out))
        ok &= out.ok
        if out.row is not None:
            rows.append(out.row)
    vlab = f"V{float(cfg.V):g}"
    series = {}
    for d, pts in curves.items():
        suffix = "" if d == 2.0 else f"-delta{d:g}"
        if pts:
            ps, es, us = zip(*pts)
            series[f"pe_{vlab}_R1{suffix}"] = (ps, tuple(math.log10(e) for e in es))
            series[f"pn_{vlab}_R1{suffix}"] = (ps, us)
    outputs = export_curves(series, outdir)
    if rows:
        outputs.append(export_report(rows, outdir / "report.csv"))
    return outputs, ok


def _cmd_bifurcation(cfg, outdir):
    spec = SweepSpec.bifurcation(V_values=_floats(cfg.V_list),
                                 p=4.0 if cfg.p == "exp" else float(cfg.p),
                                 delta=cfg.delta, eps_sc=cfg.eps_sc,
                                 warm_start=not cfg.cold_start,
                                 workers=cfg.workers)
    if cfg.n > 0:
        spec.schedule = _schedule(cfg, MeshSchedule(n=cfg.n))
    curve, outcomes = run_bifurcation(spec)
    ok = True
    rows = []
    for out in outcomes:
        print(_report_line(out.label, out))
        ok &= out.ok
        if out.row is not None:
            rows.append(out.row)
    xs = [V for V, _ in sorted(curve)]
    ys = [math.log10(E) for _, E in sorted(curve)]
    outputs = export_curves({"bifurcation": (xs, ys)}, outdir)
    if rows:
        outputs.append(export_report(rows, outdir / "report.csv"))
    return outputs, ok


def _cmd_double_well(cfg, outdir):
    spec = SweepSpec.double_well(eps_values=_floats(cfg.eps_list),
                                 delta=cfg.delta, workers=cfg.workers)
    if cfg.n > 0:
        spec.schedule = _schedule(cfg, MeshSchedule(n=cfg.n, s_max=1.0))
    results = run_double_well(spec)
    ok = True
    rows = []
    summary = ["label,eps,argmax_x,argmax_y,energy"]
    outputs = []
    for label, out, argmax in results:
        print(_report_line(label, out))
        ok &= out.ok
        if out.row is not None:
            rows.append(out.row)
            summary.append(",".join([label.replace(" ", "_"),
                                     _fmt(out.result.report.eps_sc),
                                     _fmt(argmax[0]), _fmt(argmax[1]),
                                     _fmt(out.row.energy)]))
            tag = label.replace(" ", "_").replace("=", "")
            outputs.append(export_field(out.result.solution_v,
                                        out.result.solution_u,
                                        outdir / f"solution_{tag}.vtk"))
            outputs.append(outdir / f"solution_{tag}.dat")
    (Path(outdir) / "doublewell.csv").write_text("\n".join(summary) + "\n")
    outputs.append(Path(outdir) / "doublewell.csv")
    if rows:
        outputs.append(export_report(rows, outdir / "report.csv"))
    return outputs, ok


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    logging.basicConfig(
        level=logging.DEBUG if "--verbose" in argv else logging.INFO,
        format="%(message)s")

    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    command = {
        "solve": _cmd_solve,
        "sweep-domain": _cmd_sweep_domain,
        "sweep-p": _cmd_sweep_p,
        "bifurcation": _cmd_bifurcation,
        "double-well": _cmd_double_well,
    }[cfg.subcommand]
    outputs, ok = command(cfg, outdir)
    write_manifest(cfg, outputs, outdir)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
