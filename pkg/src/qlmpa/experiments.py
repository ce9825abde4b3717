"""Scripted studies: domain sweeps, exponent sweeps along the delta
homotopy, the small-potential limit, and the double-well multiplicity
comparison.

Every study is a list of single solves driven by `solve_problem`, which
builds the mesh from a schedule, projects the chosen initial guess and
runs the mountain pass iteration.  Independent sweep points can run in
parallel processes (QLMPA_WORKERS or the spec's `workers`); continuation
chains stay sequential.  Results are gathered in input order either way,
so output does not depend on the worker count.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .fem import FeFunction
from .mesh import build_mesh
from .model import Nonlinearity, Potential, Problem
from .mpa import MpaConfig, MpaResult, ReportRow, run_mpa

# default two-well geometry of the localized guess
_WELL2 = (0.3, -0.2)


def default_guess(msh) -> FeFunction:
    """The product bump (0.25 - (x/R)^2)(0.25 - (y/R)^2), zero on the boundary."""
    x, y = msh.nodes[:, 0], msh.nodes[:, 1]
    vals = (0.25 - (x / msh.R) ** 2) * (0.25 - (y / msh.R) ** 2)
    vals[msh.boundary_mask] = 0.0
    return FeFunction(msh, vals)


def localized_guess(msh, center=_WELL2, radius_sq=0.1) -> FeFunction:
    """max(0, radius_sq - |x - center|^2), clipped to zero trace."""
    x, y = msh.nodes[:, 0], msh.nodes[:, 1]
    vals = np.maximum(0.0, radius_sq - (x - center[0]) ** 2 - (y - center[1]) ** 2)
    vals[msh.boundary_mask] = 0.0
    return FeFunction(msh, vals)


@dataclass
class MeshSchedule:
    """Resolution and solver knobs for one run."""

    n: int = 128
    refine_every: int = 0
    refine_fraction: float = 0.2
    max_nodes: int = 250_000
    s_max: float = 50.0        # wide bracket; large amplitude climbs need long steps
    grad_tol: float = 1e-2
    max_iter: int = 1000
    newton_iters: int = 8

    def config(self) -> MpaConfig:
        return MpaConfig(grad_tol=self.grad_tol, max_iter=self.max_iter,
                         refine_every=self.refine_every,
                         refine_fraction=self.refine_fraction,
                         newton_iters=self.newton_iters, s_max=self.s_max,
                         max_nodes=self.max_nodes)


def table_schedule(R) -> MeshSchedule:
    """Resolution policy for the constant-potential tables.

    n = 128 up to R = 10, n = 256 at R = 30; the R = 1 runs additionally
    refine adaptively because their amplitudes are extreme.
    """
    if R <= 1.0 + 1e-9:
        return MeshSchedule(n=128, refine_every=5, refine_fraction=0.2,
                            max_nodes=80_000)
    if R <= 10.0 + 1e-9:
        return MeshSchedule(n=128)
    return MeshSchedule(n=256)


@dataclass
class RunOutcome:
    """One sweep point: the report row plus failure information."""

    label: str
    row: ReportRow | None = None
    result: MpaResult | None = None
    error: str | None = None

    @property
    def ok(self):
        return self.error is None and self.result is not None and self.result.converged


@dataclass
class SweepSpec:
    """Declarative description of one study."""

    kind: str                       # domain_sweep | p_sweep | bifurcation | double_well
    nonlinearity: Nonlinearity = field(default_factory=lambda: Nonlinearity.power(4))
    potential: Potential = field(default_factory=lambda: Potential.constant(0.0))
    delta: float = 2.0
    eps_sc: float = 1.0
    R_values: tuple = ()
    p_values: tuple = ()
    deltas: tuple = ()
    V_values: tuple = ()
    eps_values: tuple = ()
    guesses: tuple = ("default", "localized")
    schedule: MeshSchedule | None = None   # None: per-kind policy
    warm_start: bool = True                # continuation in the bifurcation study
    workers: int | None = None             # None: QLMPA_WORKERS, default 1

    def __post_init__(self):
        grids = {"domain_sweep": self.R_values, "p_sweep": self.p_values,
                 "bifurcation": self.V_values, "double_well": self.eps_values}
        if self.kind not in grids:
            raise ValueError(f"unknown sweep kind {self.kind!r}")
        grid = grids[self.kind]
        if len(grid) == 0:
            raise ValueError(f"{self.kind} needs a nonempty grid")
        diffs = np.diff(np.asarray(grid, dtype=float))
        if len(grid) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ValueError(f"{self.kind} grid must be strictly monotone")

    @staticmethod
    def domain(nonlinearity, potential, R_values=(1.0, 5.0, 10.0, 30.0),
               delta=2.0, **kw):
        return SweepSpec("domain_sweep", nonlinearity=nonlinearity,
                         potential=potential, delta=delta,
                         R_values=tuple(R_values), **kw)

    @staticmethod
    def p_sweep(V=0.0, p_values=tuple(np.linspace(4.0, 7.0, 13)),
                deltas=(0.0, 1.0, 2.0), **kw):
        return SweepSpec("p_sweep", potential=Potential.constant(V),
                         p_values=tuple(p_values), deltas=tuple(deltas), **kw)

    @staticmethod
    def bifurcation(V_values=(0.1, 0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0,
                              6.0, 7.0, 8.0, 9.0, 10.0), p=4.0, **kw):
        return SweepSpec("bifurcation", nonlinearity=Nonlinearity.power(p),
                         V_values=tuple(V_values), **kw)

    @staticmethod
    def double_well(eps_values=(0.05, 0.25), **kw):
        return SweepSpec("double_well", nonlinearity=Nonlinearity.power(4),
                         potential=Potential.double_well(),
                         eps_values=tuple(eps_values), **kw)


def solve_problem(problem: Problem, schedule: MeshSchedule, guess="default") -> MpaResult:
    """Build the mesh, project the guess and run the full MPA solve."""
    msh = build_mesh(problem.R, schedule.n)
    if isinstance(guess, FeFunction):
        initial = guess
    elif guess == "default":
        initial = default_guess(msh)
    elif guess == "localized":
        initial = localized_guess(msh)
    else:
        raise ValueError(f"unknown initial guess {guess!r}")
    return run_mpa(problem, schedule.config(), initial)


def _solve_task(task):
    label, problem, schedule, guess = task
    try:
        result = solve_problem(problem, schedule, guess)
        return RunOutcome(label, row=result.report, result=result)
    except Exception as exc:  # per-point propagation, the sweep continues
        return RunOutcome(label, error=f"{type(exc).__name__}: {exc}")


def _n_workers(spec):
    if spec.workers is not None:
        return max(1, int(spec.workers))
    return max(1, int(os.environ.get("QLMPA_WORKERS", "1")))


def _run_tasks(tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [_solve_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_solve_task, tasks))


def run_domain_sweep(spec: SweepSpec):
    """One run per R with the default guess; rows in grid order."""
    if spec.kind != "domain_sweep":
        raise ValueError("spec.kind must be 'domain_sweep'")
    tasks = []
    for R in spec.R_values:
        problem = Problem(spec.nonlinearity, spec.potential, delta=spec.delta,
                          eps_sc=spec.eps_sc, R=float(R))
        sched = spec.schedule if spec.schedule is not None else table_schedule(R)
        tasks.append((f"R={R:g}", problem, sched, "default"))
    return _run_tasks(tasks, _n_workers(spec))


def run_p_sweep(spec: SweepSpec):
    """Exponent sweep on Omega_1 for each delta in the homotopy.

    Returns (curves, outcomes) where curves maps delta to a list of
    (p, energy, max_u) tuples for the converged points.
    """
    if spec.kind != "p_sweep":
        raise ValueError("spec.kind must be 'p_sweep'")
    sched = spec.schedule if spec.schedule is not None else MeshSchedule(n=64)
    tasks = []
    for d in spec.deltas:
        for p in spec.p_values:
            problem = Problem(Nonlinearity.power(p), spec.potential, delta=float(d),
                              eps_sc=spec.eps_sc, R=1.0)
            tasks.append((f"delta={d:g} p={p:g}", problem, sched, "default"))
    outcomes = _run_tasks(tasks, _n_workers(spec))
    curves = {}
    i = 0
    for d in spec.deltas:
        pts = []
        for p in spec.p_values:
            out = outcomes[i]
            i += 1
            if out.row is not None:
                pts.append((float(p), out.row.energy, out.row.max_u))
        curves[float(d)] = pts
    return curves, outcomes


def run_bifurcation(spec: SweepSpec):
    """Energy of the ground state on Omega_10 as the potential level varies.

    Runs are chained: each V is warm-started from the previous solution
    unless spec.warm_start is False.  Returns (curve, outcomes) with curve
    a list of (V, energy) pairs for the converged points.
    """
    if spec.kind != "bifurcation":
        raise ValueError("spec.kind must be 'bifurcation'")
    sched = spec.schedule if spec.schedule is not None else MeshSchedule(n=128)
    outcomes = []
    previous = None
    for V in spec.V_values:
        problem = Problem(spec.nonlinearity, Potential.constant(V),
                          delta=spec.delta, eps_sc=spec.eps_sc, R=10.0)
        guess = previous if (spec.warm_start and previous is not None) else "default"
        out = _solve_task((f"V={V:g}", problem, sched, guess))
        outcomes.append(out)
        if out.result is not None:
            previous = out.result.solution_v
    curve = [(float(V), out.row.energy)
             for V, out in zip(spec.V_values, outcomes) if out.row is not None]
    return curve, outcomes


def run_double_well(spec: SweepSpec):
    """Two initial guesses per eps over the two-well potential on Omega_1.

    Returns a list of (label, outcome, argmax) with argmax the node
    location of the maximum of u for converged runs.
    """
    if spec.kind != "double_well":
        raise ValueError("spec.kind must be 'double_well'")
    tasks = []
    for eps in spec.eps_values:
        for guess in spec.guesses:
            problem = Problem(spec.nonlinearity, spec.potential, delta=spec.delta,
                              eps_sc=float(eps), R=1.0)
            if spec.schedule is not None:
                sched = spec.schedule
            elif eps <= 0.1:
                # concentration scale ~ eps: refine near the occupied well
                sched = MeshSchedule(n=128, refine_every=5, refine_fraction=0.15,
                                     max_nodes=80_000, s_max=1.0)
            else:
                sched = MeshSchedule(n=128, s_max=1.0)
            tasks.append((f"eps={eps:g} guess={guess}", problem, sched, guess))
    outcomes = _run_tasks(tasks, _n_workers(spec))
    results = []
    for (label, _, _, _), out in zip(tasks, outcomes):
        argmax = None
        if out.result is not None:
            u = out.result.solution_u
            argmax = tuple(u.mesh.nodes[int(np.argmax(u.values))])
        results.append((label, out, argmax))
    return results
