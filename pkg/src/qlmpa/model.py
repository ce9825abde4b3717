"""Problem data and the variational calculus of the transformed functional.

The quasi-linear equation -eps^2 (Delta u + u Delta u^2) + V(x) u = g(u)
is solved through the substitution u = r_delta(v), which yields the
semi-linear problem -eps^2 Delta v = f(x, v) with

    f(x, v) = r'(v) (g(r(v)) - V(x) r(v)),
    F(x, v) = G(r(v)) - V(x) r(v)^2 / 2,      G' = g,

and the C1 energy  T(v) = (eps^2/2) int |grad v|^2 - int F(x, v).
The original (only formally defined) energy is

    E(u) = (eps^2/2) int (1 + delta u^2) |grad u|^2
           + 1/2 int V u^2 - int G(u),

and E(r(v)) = T(v) exactly, by the Cauchy problem defining r.

Both nonlinearities are odd: g(u) = |u|^(p-1) u, and for the exponential
case the odd extension sign(u) (exp(u^2) - 1); computed iterates live in
the cone of nonnegative functions where the extension is irrelevant.
"""

import weakref
from dataclasses import dataclass

import numpy as np

from . import _kernels, fem, transform
from .fem import FeFunction


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    kind: str            # "power" or "exponential"
    p: float = 0.0       # exponent, power kind only

    def __post_init__(self):
        if self.kind not in ("power", "exponential"):
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")
        if self.kind == "power" and not self.p > 1:
            raise ValueError(f"power exponent must exceed 1, got {self.p}")

    @staticmethod
    def power(p):
        return Nonlinearity("power", float(p))

    @staticmethod
    def exponential():
        return Nonlinearity("exponential")

    @property
    def label(self):
        return f"{self.p:g}" if self.kind == "power" else "exp"

    @property
    def _kk(self):
        return _kernels.KIND_POWER if self.kind == "power" else _kernels.KIND_EXP

    def g(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.kind == "power":
            out = np.sign(u) * np.abs(u) ** self.p
        else:
            out = np.sign(u) * np.expm1(u * u)
        return out if out.ndim else float(out)

    def gprime(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.kind == "power":
            out = self.p * np.abs(u) ** (self.p - 1.0)
        else:
            out = 2.0 * np.abs(u) * np.exp(u * u)
        return out if out.ndim else float(out)

    def primitive(self, u):
        """G(u) = int_0^u g; even, G(0) = 0."""
        u = np.asarray(u, dtype=np.float64)
        out = _kernels.G_arr(np.atleast_1d(u).astype(np.float64), self._kk, self.p)
        if not np.all(np.isfinite(out)):
            raise ValueError("exponential primitive overflow: |u| > 8")
        return out.reshape(u.shape) if u.ndim else float(out[0])


# paper parameters of the two-well potential
_DW_CENTERS = ((-0.2, 0.2), (0.3, -0.2))
_DW_DEPTHS = (8.0, 5.0)
_DW_WIDTHS = (20.0, 30.0)


@dataclass(frozen=True, eq=False)
class Potential:
    kind: str                    # "constant", "double_well" or "tabulated"
    V0: float = 0.0
    base: float = 10.0
    depths: tuple = _DW_DEPTHS
    widths: tuple = _DW_WIDTHS
    centers: tuple = _DW_CENTERS
    values: np.ndarray | None = None   # tabulated, one value per mesh node

    def __post_init__(self):
        if self.kind not in ("constant", "double_well", "tabulated"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "constant" and self.V0 < 0:
            raise ValueError(f"constant potential must be nonnegative, got {self.V0}")
        if self.kind == "tabulated" and self.values is None:
            raise ValueError("tabulated potential needs nodal values")

    @staticmethod
    def constant(V0):
        return Potential("constant", V0=float(V0))

    @staticmethod
    def double_well(base=10.0, depths=_DW_DEPTHS, widths=_DW_WIDTHS,
                    centers=_DW_CENTERS):
        return Potential("double_well", base=float(base), depths=tuple(depths),
                         widths=tuple(widths), centers=tuple(centers))

    @staticmethod
    def tabulated(values):
        return Potential("tabulated", values=np.asarray(values, dtype=np.float64))

    @property
    def label(self):
        if self.kind == "constant":
            return f"{self.V0:g}"
        return "doublewell" if self.kind == "double_well" else "tabulated"

    def at_points(self, pts):
        """Pointwise values; tabulated potentials only exist on their mesh."""
        pts = np.asarray(pts, dtype=np.float64)
        flat = pts.reshape(-1, 2)
        if self.kind == "constant":
            out = np.full(flat.shape[0], self.V0)
        elif self.kind == "double_well":
            out = np.full(flat.shape[0], self.base)
            for (cx, cy), d, w in zip(self.centers, self.depths, self.widths):
                r2 = (flat[:, 0] - cx) ** 2 + (flat[:, 1] - cy) ** 2
                out -= d * np.exp(-w * r2)
        else:
            raise ValueError("tabulated potential cannot be evaluated off-mesh")
        return out.reshape(pts.shape[:-1])


@dataclass(frozen=True, eq=False)
class Problem:
    """Everything defining the transformed functional on Omega_R."""

    nonlinearity: Nonlinearity
    potential: Potential
    delta: float = 2.0
    eps_sc: float = 1.0
    R: float = 1.0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError(f"delta must be nonnegative, got {self.delta}")
        if self.eps_sc <= 0:
            raise ValueError(f"eps_sc must be positive, got {self.eps_sc}")
        if self.R <= 0:
            raise ValueError(f"R must be positive, got {self.R}")


def f_eval(problem: Problem, x, v):
    """f(x, v) = r'(v) (g(r(v)) - V(x) r(v)); odd in v for constant V."""
    V = problem.potential.at_points(np.asarray(x, dtype=np.float64))
    v = np.asarray(v, dtype=np.float64)
    out = _kernels.f_arr(np.atleast_1d(v).astype(np.float64),
                         np.broadcast_to(np.atleast_1d(V), np.atleast_1d(v).shape).astype(np.float64),
                         problem.delta, problem.nonlinearity._kk,
                         problem.nonlinearity.p)
    if not np.all(np.isfinite(out)):
        raise ValueError("nonlinearity overflow in f")
    return out.reshape(v.shape) if v.ndim else float(out[0])


def F_eval(problem: Problem, x, v):
    """F(x, v) = G(r(v)) - V(x) r(v)^2 / 2, the primitive of f in v."""
    V = problem.potential.at_points(np.asarray(x, dtype=np.float64))
    v = np.asarray(v, dtype=np.float64)
    r = transform.r_eval(np.atleast_1d(v), problem.delta)
    G = problem.nonlinearity.primitive(r)
    out = G - 0.5 * np.broadcast_to(np.atleast_1d(V), r.shape) * r * r
    return out.reshape(v.shape) if v.ndim else float(out[0])


class _Ray:
    """T and its t-derivatives along {t v}, sharing precomputed quadrature data.

    energy(t) = (eps^2/2) t^2 int |grad v|^2 - int F(x, t v); the slope and
    curvature differentiate under the integral with the same degree-2 rule,
    so a slope root is exactly a discrete ray-critical point.
    """

    def __init__(self, ctx, grad2, wq):
        self._ctx = ctx
        self._eps2 = ctx.problem.eps_sc ** 2
        self._grad2 = grad2
        self._wq = wq
        self._wq2 = None

    def energy(self, t):
        return self._ctx._check(
            0.5 * self._eps2 * self._grad2 * t * t
            - _kernels.F_total(t, self._wq, self._ctx.Vq, self._ctx.qw,
                               *self._ctx._kp))

    def slope(self, t):
        f = _kernels.f_arr(t * self._wq, self._ctx.Vq, *self._ctx._kp)
        return self._ctx._check(
            self._eps2 * self._grad2 * t - float((f * self._wq) @ self._ctx.qw))

    def curvature(self, t):
        if self._wq2 is None:
            self._wq2 = self._wq * self._wq
        fp = _kernels.fprime_arr(t * self._wq, self._ctx.Vq, *self._ctx._kp)
        return self._ctx._check(
            self._eps2 * self._grad2 - float((fp * self._wq2) @ self._ctx.qw))


class TransformedFunctional:
    """Discrete T, E, H1_0 gradient and Newton linearization on one mesh.

    Binds a Problem to a Mesh and caches everything reusable: quadrature
    geometry, the potential at quadrature points, and the eps^2-scaled
    stiffness operator with its factorization.  The gradient of T is the
    Riesz representative in the eps^2-weighted H1_0 inner product, obtained
    from one linear solve:  eps^2 (grad g, grad phi) = dT(v)[phi].
    """

    def __init__(self, problem: Problem, msh):
        self.problem = problem
        self.mesh = msh
        self.geo = fem.geometry(msh)
        if problem.potential.kind == "tabulated":
            vq = fem.midpoint_values(self.geo, problem.potential.values)
        else:
            vq = problem.potential.at_points(self.geo.qpoints.reshape(-1, 2))
        self.Vq = np.ascontiguousarray(vq, dtype=np.float64).reshape(-1)
        self.qw = np.ascontiguousarray(self.geo.qweights)
        self.stiffness = fem.assemble_stiffness(msh, problem.eps_sc ** 2)
        nl = problem.nonlinearity
        self._kp = (problem.delta, nl._kk, nl.p)

    def _check(self, value):
        if not np.isfinite(value):
            raise ValueError("non-finite energy: nonlinearity overflow "
                             "(exponential primitive limited to |u| <= 8)")
        return value

    def f_total(self, values):
        """int F(x, v) by the degree-2 rule."""
        wq = fem.midpoint_values(self.geo, values).reshape(-1)
        return self._check(_kernels.F_total(1.0, wq, self.Vq, self.qw, *self._kp))

    def energy(self, values):
        grad2 = fem.grad_sq_form(self.geo, values)
        return 0.5 * self.problem.eps_sc ** 2 * grad2 - self.f_total(values)

    def ray(self, values):
        """Return t -> T(t v) with the ray-independent parts precomputed."""
        return self.ray_data(values).energy

    def ray_data(self, values):
        """Energy, slope and curvature along the ray {t v}."""
        grad2 = fem.grad_sq_form(self.geo, values)
        wq = np.ascontiguousarray(fem.midpoint_values(self.geo, values).reshape(-1))
        return _Ray(self, grad2, wq)

    def f_at_midpoints(self, values):
        wq = fem.midpoint_values(self.geo, values).reshape(-1)
        fq = _kernels.f_arr(np.ascontiguousarray(wq), self.Vq, *self._kp)
        if not np.all(np.isfinite(fq)):
            raise ValueError("non-finite nonlinearity value f(x, v)")
        return fq.reshape(-1, 3)

    def residual_free(self, values):
        """eps^2 K v - load(f(., v)) on the interior nodes."""
        load = fem.load_from_midpoints(self.mesh, self.f_at_midpoints(values))
        K = self.stiffness
        return K.apply(values[K.free]) - load[K.free]

    def gradient(self, values):
        """Riesz gradient of T and its eps^2-weighted H1_0 norm."""
        K = self.stiffness
        rhs = self.residual_free(values)
        g_free = K.solve_free(rhs)
        g = np.zeros(self.geo.n_nodes)
        g[K.free] = g_free
        norm = float(np.sqrt(max(g_free @ rhs, 0.0)))
        return g, norm

    def norm_h10(self, values):
        """eps-weighted H1_0 norm used for directions and gradients."""
        return self.problem.eps_sc * np.sqrt(fem.grad_sq_form(self.geo, values))

    def newton_matrix(self, values):
        """Linearization eps^2 K - int (df/dv) phi_i phi_j on interior nodes."""
        wq = fem.midpoint_values(self.geo, values).reshape(-1)
        fp = _kernels.fprime_arr(np.ascontiguousarray(wq), self.Vq, *self._kp)
        if not np.all(np.isfinite(fp)):
            raise ValueError("non-finite nonlinearity derivative")
        M = fem.assemble_weighted_mass(self.mesh, fp.reshape(-1, 3))
        free = self.stiffness.free
        return (self.stiffness.matrix - M[free][:, free].tocsc()).tocsc()

    def energy_original(self, u_values):
        """E(u) with the (1 + delta u^2) gradient weight at quadrature points."""
        delta, kind, p = self._kp
        dx, dy = fem.element_gradients(self.geo, u_values)
        grad2 = dx * dx + dy * dy
        uq = fem.midpoint_values(self.geo, u_values)
        weight = ((1.0 + delta * uq * uq) * (self.geo.area / 3.0)[:, None]).sum(axis=1)
        term_grad = 0.5 * self.problem.eps_sc ** 2 * float(grad2 @ weight)
        uqf = uq.reshape(-1)
        term_V = 0.5 * float(self.qw @ (self.Vq * uqf * uqf))
        G = _kernels.G_arr(np.ascontiguousarray(uqf), kind, p)
        if not np.all(np.isfinite(G)):
            raise ValueError("nonlinearity primitive overflow: |u| > 8")
        return self._check(term_grad + term_V - float(self.qw @ G))

    def pohozaev(self, values):
        """-2 int F(x, v): the N = 2 Pohozaev residual of the semilinear problem."""
        if self.problem.potential.kind != "constant":
            raise ValueError("Pohozaev diagnostic requires a constant potential")
        return -2.0 * self.f_total(values)


_ctx_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def get_functional(problem: Problem, msh) -> TransformedFunctional:
    per_mesh = _ctx_cache.get(msh)
    if per_mesh is None:
        per_mesh = weakref.WeakKeyDictionary()
        _ctx_cache[msh] = per_mesh
    ctx = per_mesh.get(problem)
    if ctx is None:
        ctx = TransformedFunctional(problem, msh)
        per_mesh[problem] = ctx
    return ctx


def energy_T(problem: Problem, v: FeFunction):
    """T(v) = (eps^2/2) int |grad v|^2 - int F(x, v)."""
    fem.require_conforming(v)
    return get_functional(problem, v.mesh).energy(v.values)


def energy_E(problem: Problem, u: FeFunction):
    """E(u), the quasi-linear energy of u (equals T(r^{-1}(u)) in the limit)."""
    fem.require_conforming(u)
    return get_functional(problem, u.mesh).energy_original(u.values)


def gradient_T(problem: Problem, v: FeFunction) -> FeFunction:
    """Riesz gradient of T at v in the eps^2-weighted H1_0 inner product."""
    fem.require_conforming(v)
    g, _ = get_functional(problem, v.mesh).gradient(v.values)
    return FeFunction(v.mesh, g)


def gradient_norm(problem: Problem, v: FeFunction):
    """The pair (gradient, norm) in one call."""
    fem.require_conforming(v)
    g, norm = get_functional(problem, v.mesh).gradient(v.values)
    return FeFunction(v.mesh, g), norm


def pohozaev_diag(problem: Problem, v: FeFunction):
    """-2 int F(x, v); vanishes on exact entire-plane solutions with V = 0."""
    fem.require_conforming(v)
    return get_functional(problem, v.mesh).pohozaev(v.values)
