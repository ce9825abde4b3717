"""Peak-selection mountain pass algorithm.

One outer step, starting from an iterate u_n in Ran(P) within the cone K
of nonnegative functions:

    u_n[s] = u_n - s grad T(u_n) / |grad T(u_n)|
    u_{n+1} = P(P_K(u_n[s_n]))

where P_K is nodal truncation at zero and P rescales onto the unique
maximizer of T along the ray through the function.  The stepsize s_n is a
Brent minimizer of s -> T(P(P_K(u_n[s]))) on (0, s_max], accepted only if
it satisfies the sufficient-decrease inequality

    T(u_{n+1}) - T(u_n) < -(1/2) s_n |grad T(u_n)|,

with halving from s_max as fallback.  Norms and descent directions use the
eps^2-weighted H1_0 inner product, matching the Riesz gradient.  A few
damped Newton iterations on the residual eps^2 (-Delta v) - f(x, v) = 0
polish the final iterate.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy.optimize import fminbound

from . import fem, model
from .fem import FeFunction
from .mesh import interpolate_to_refined, refine_adaptive
from ._kernels import r_eval_arr

log = logging.getLogger(__name__)

_T1_CAP = 2.0 ** 60
_STALL_FLOOR = 1e-12
_LINESEARCH_XATOL = 1e-3   # times s_max; the Armijo test guards quality
_LINESEARCH_MAXFUN = 60
_BIG = 1e300


class PeakSelectionError(RuntimeError):
    """The ray energy never became nonpositive (no mountain pass geometry)."""


class StalledStepError(RuntimeError):
    """No admissible stepsize above the stall floor."""


@dataclass
class MpaConfig:
    grad_tol: float = 1e-2
    max_iter: int = 1000
    refine_every: int = 10        # adaptive refinement cadence, 0 disables
    refine_fraction: float = 0.2
    newton_iters: int = 8
    peak_tol: float = 1e-10       # relative tolerance of the ray maximization
    s_max: float = 1.0
    max_nodes: int = 250_000      # refinement stops above this node count

    def __post_init__(self):
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if not 0.0 <= self.refine_fraction <= 1.0:
            raise ValueError("refine_fraction must lie in [0, 1]")
        if self.s_max <= 0:
            raise ValueError("s_max must be positive")


@dataclass
class IterationRecord:
    """One line of the iteration log.

    Rows with step == 0 are bookkeeping rows recording the energy of the
    (re)projected iterate at the start and after each mesh refinement;
    rows with step > 0 are accepted updates, auditable against the
    previous row on the same mesh via the sufficient-decrease inequality.
    """

    iteration: int
    energy: float        # T after the accepted step (or of the projected iterate)
    grad_norm: float     # |grad T| at the iterate the step started from
    step: float          # accepted s_n, 0 on bookkeeping rows
    n_nodes: int


@dataclass
class ReportRow:
    """One table row describing a converged run."""

    R: float
    p_or_exp: str
    V_label: str
    delta: float
    eps_sc: float
    max_v: float
    grad_v_l2: float
    max_u: float
    energy: float
    grad_norm: float
    iterations: int


@dataclass
class MpaResult:
    solution_v: FeFunction
    solution_u: FeFunction
    history: list
    report: ReportRow
    converged: bool
    newton_residuals: list = field(default_factory=list)
    flags: list = field(default_factory=list)


def cone_project(v: FeFunction) -> FeFunction:
    """Nodal truncation onto the cone of nonnegative functions."""
    return FeFunction(v.mesh, np.maximum(v.values, 0.0))


def _peak(ctx, values, peak_tol, polish=True):
    """Maximize t -> T(t v) on [0, t1]; returns (t_star, T(t_star v)).

    t1 starts at 1 and doubles until T(t1 v) <= 0, so the maximizer is
    interior; Brent locates it to relative tolerance peak_tol.  Brent alone
    bottoms out near sqrt(machine eps) relative (the value is flat at the
    peak), so accepted iterates are polished by Newton on the ray slope,
    the equivalent ray-critical-point equation.
    """
    ray = ctx.ray_data(values)
    t1 = 1.0
    while ray.energy(t1) > 0.0:
        t1 *= 2.0
        if t1 > _T1_CAP:
            raise PeakSelectionError(
                "no sign change on ray: T(t v) stayed positive up to the "
                "doubling cap (superquadratic growth assumption violated?)")
    t_star, neg_val, _, _ = fminbound(lambda t: -ray.energy(t), 0.0, t1,
                                      xtol=peak_tol * t1, maxfun=500,
                                      full_output=True)
    t_star = float(t_star)
    if not polish:
        return t_star, float(-neg_val)
    t = t_star
    for _ in range(12):
        slope = ray.slope(t)
        curv = ray.curvature(t)
        if curv >= 0.0:
            break
        step = slope / curv
        tn = t - step
        if not 0.5 * t_star <= tn <= 2.0 * t_star:
            break
        t = tn
        if abs(step) <= 1e-14 * t:
            break
    return t, ray.energy(t)


def peak_select(problem, v: FeFunction, peak_tol=1e-10):
    """Project v onto the peak of its ray: the Nehari-type normalization."""
    fem.require_conforming(v)
    if np.any(v.values < 0.0):
        raise ValueError("peak selection is defined on the nonnegative cone")
    if not v.values.any():
        raise ValueError("peak selection undefined at zero")
    ctx = model.get_functional(problem, v.mesh)
    t_star, _ = _peak(ctx, v.values, peak_tol)
    return t_star, FeFunction(v.mesh, t_star * v.values)


def _line_search(ctx, config, u_values, direction, gnorm, energy_now):
    """Brent stepsize with the sufficient-decrease acceptance test.

    Returns (s, new values, new energy).  Falls back to halving from s_max
    when the Brent minimizer misses the admissible set.
    """
    def projected(s, polish):
        w = np.maximum(u_values - s * direction, 0.0)
        if not w.any():
            return None, None
        try:
            t_star, val = _peak(ctx, w, config.peak_tol, polish=polish)
        except PeakSelectionError:
            return None, None
        return t_star * w, val

    def phi(s):
        _, val = projected(s, polish=False)
        return val if val is not None else _BIG

    s_brent, _, _, _ = fminbound(phi, 0.0, config.s_max,
                                 xtol=_LINESEARCH_XATOL * config.s_max,
                                 maxfun=_LINESEARCH_MAXFUN, full_output=True)

    bound = -0.5 * gnorm
    candidates = [float(s_brent)]
    s = config.s_max
    while s >= _STALL_FLOOR:
        candidates.append(s)
        s *= 0.5
    for s in candidates:
        if s < _STALL_FLOOR:
            continue
        w, val = projected(s, polish=True)
        if w is not None and val - energy_now < bound * s:
            return s, w, val
    raise StalledStepError(
        f"no admissible stepsize above {_STALL_FLOOR:g} "
        f"(|grad T| = {gnorm:.3e}, T = {energy_now:.6e}); the discretization "
        "may be too coarse or the iterate is nearly critical")


def mpa_step(problem, config: MpaConfig, u_n: FeFunction):
    """One accepted update u_{n+1} = P(P_K(u_n[s_n])); returns (u_next, s_n)."""
    fem.require_conforming(u_n)
    ctx = model.get_functional(problem, u_n.mesh)
    g, gnorm = ctx.gradient(u_n.values)
    energy_now = ctx.energy(u_n.values)
    s, u_next, _ = _line_search(ctx, config, u_n.values, g / gnorm, gnorm,
                                energy_now)
    return FeFunction(u_n.mesh, u_next), s


def _element_gradient_seminorm(ctx, values):
    """Elementwise H1 seminorm of a P1 function: the refinement indicator."""
    dx, dy = fem.element_gradients(ctx.geo, values)
    return np.sqrt(ctx.geo.area * (dx * dx + dy * dy))


def _newton_polish(ctx, values, iters):
    """Damped Newton on eps^2 K v = load(f(., v)); returns (values, residuals, flags)."""
    free = ctx.stiffness.free
    v = values.copy()
    res = ctx.residual_free(v)
    rnorm = float(np.linalg.norm(res))
    residuals = [rnorm]
    flags = []
    for _ in range(iters):
        # cancellation floor of the residual Kv - load
        floor = 1e-13 * float(np.linalg.norm(ctx.stiffness.apply(v[free]))) + 1e-300
        if rnorm <= floor:
            break
        directions = []
        try:
            J = ctx.newton_matrix(v)
            d = spla.splu(J).solve(-res)
            if np.all(np.isfinite(d)):
                directions.append(("newton", d))
        except (RuntimeError, ValueError):
            pass
        if not directions:
            warnings.warn("Newton linearization unusable; taking a gradient step")
            flags.append("newton-gradient-step")
        # gradient direction as fallback for indefinite or failed solves
        directions.append(("gradient", -ctx.stiffness.solve_free(res)))

        accepted = False
        for kind, d in directions:
            alpha = 1.0
            for _ in range(31):
                vn = v.copy()
                vn[free] += alpha * d
                try:
                    resn = ctx.residual_free(vn)
                except ValueError:
                    alpha *= 0.5
                    continue
                rn = float(np.linalg.norm(resn))
                if rn < rnorm:
                    v, res, rnorm = vn, resn, rn
                    residuals.append(rnorm)
                    accepted = True
                    break
                alpha *= 0.5
            if accepted:
                break
            if kind == "newton" and rnorm > 10 * floor:
                warnings.warn("Newton step rejected after 30 halvings; "
                              "trying a gradient step")
                flags.append("newton-damping-failed")
        if not accepted:
            if rnorm > 10 * floor:
                flags.append("newton-no-progress")
            break
    return v, residuals, flags


def newton_refine(problem, v: FeFunction, iters) -> FeFunction:
    """A few damped Newton iterations on the discrete residual equation."""
    fem.require_conforming(v)
    ctx = model.get_functional(problem, v.mesh)
    out, _, _ = _newton_polish(ctx, v.values, iters)
    return FeFunction(v.mesh, out)


def run_mpa(problem, config: MpaConfig, initial: FeFunction) -> MpaResult:
    """Full solve: project the guess, iterate, refine, polish, report."""
    fem.require_conforming(initial)
    if np.any(initial.values < 0.0) or not initial.values.any():
        raise ValueError("initial guess must be nonnegative and nonzero")

    msh = initial.mesh
    ctx = model.get_functional(problem, msh)
    t_star, energy0 = _peak(ctx, np.maximum(initial.values, 0.0), config.peak_tol)
    u = t_star * np.maximum(initial.values, 0.0)

    history = [IterationRecord(0, energy0, 0.0, 0.0, msh.n_nodes)]
    flags = []
    converged = False
    it = 0
    while True:
        g, gnorm = ctx.gradient(u)
        if gnorm <= config.grad_tol:
            converged = True
            break
        if it >= config.max_iter:
            flags.append("max-iter")
            break
        energy_now = ctx.energy(u)
        s, u, energy_next = _line_search(ctx, config, u, g / gnorm, gnorm,
                                         energy_now)
        it += 1
        history.append(IterationRecord(it, energy_next, gnorm, s, msh.n_nodes))
        log.debug("iter %d T=%.8e |g|=%.3e s=%.3e nodes=%d",
                  it, energy_next, gnorm, s, msh.n_nodes)

        if (config.refine_every > 0 and it % config.refine_every == 0
                and msh.n_nodes < config.max_nodes):
            g_now, _ = ctx.gradient(u)
            indicator = _element_gradient_seminorm(ctx, g_now)
            refined = refine_adaptive(msh, indicator, config.refine_fraction)
            if refined is not msh:
                u = interpolate_to_refined(u, refined)
                msh = refined
                ctx = model.get_functional(problem, msh)
                t_star, energy_next = _peak(ctx, u, config.peak_tol)
                u = t_star * u
                history.append(IterationRecord(it, energy_next, 0.0, 0.0,
                                               msh.n_nodes))
                log.info("refined mesh to %d nodes at iteration %d",
                         msh.n_nodes, it)

    u_polished, residuals, newton_flags = _newton_polish(ctx, u, config.newton_iters)
    flags.extend(newton_flags)

    v_fun = FeFunction(msh, u_polished)
    _, gnorm_final = ctx.gradient(u_polished)
    energy_final = ctx.energy(u_polished)
    u_fun = FeFunction(msh, r_eval_arr(np.ascontiguousarray(u_polished),
                                       problem.delta))
    grad_v, _, max_v = fem.norms(v_fun)
    report = ReportRow(
        R=problem.R,
        p_or_exp=problem.nonlinearity.label,
        V_label=problem.potential.label,
        delta=problem.delta,
        eps_sc=problem.eps_sc,
        max_v=max_v,
        grad_v_l2=grad_v,
        max_u=float(np.abs(u_fun.values).max()),
        energy=energy_final,
        grad_norm=gnorm_final,
        iterations=it,
    )
    return MpaResult(v_fun, u_fun, history, report, converged,
                     newton_residuals=residuals, flags=flags)
