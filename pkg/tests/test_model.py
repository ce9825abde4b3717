"""Nonlinearity, potential and the transformed variational calculus."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import erfi

from qlmpa import fem, model, transform
from qlmpa.fem import FeFunction
from qlmpa.mesh import build_mesh
from qlmpa.model import Nonlinearity, Potential, Problem

from _util import smooth_random_field

R_V1 = 1.2712738985228156   # r_inverse(1, 2): r(R_V1) = 1


def power_problem(p=4.0, V=0.0, delta=2.0, R=1.0, eps=1.0):
    return Problem(Nonlinearity.power(p), Potential.constant(V),
                   delta=delta, eps_sc=eps, R=R)


def test_nonlinearity_validation_and_labels():
    with pytest.raises(ValueError):
        Nonlinearity.power(0.5)
    with pytest.raises(ValueError):
        Nonlinearity("weird")
    assert Nonlinearity.power(4).label == "4"
    assert Nonlinearity.exponential().label == "exp"


def test_nonlinearity_odd_and_primitive():
    u = np.linspace(-3, 3, 31)
    for nl in (Nonlinearity.power(4), Nonlinearity.exponential()):
        assert nl.g(0.0) == 0.0
        assert np.allclose(nl.g(u), -nl.g(-u), atol=1e-13)
        assert np.allclose(nl.primitive(u), nl.primitive(-u), atol=1e-13)
    # primitive of the exponential against the closed form via erfi
    nl = Nonlinearity.exponential()
    for x in (0.25, 1.0, 2.5, 6.0):
        exact = np.sqrt(np.pi) / 2 * erfi(x) - x
        assert nl.primitive(x) == pytest.approx(exact, rel=1e-13)
    with pytest.raises(ValueError):
        nl.primitive(8.5)


def test_potential_kinds():
    assert Potential.constant(10.0).at_points([[0.3, 0.2]]) == pytest.approx([10.0])
    with pytest.raises(ValueError):
        Potential.constant(-1.0)
    dw = Potential.double_well()
    m = build_mesh(1.0, 32)
    vals = dw.at_points(m.nodes)
    assert np.all(vals > 0.0)                        # positive on Omega_1
    assert dw.at_points([(-0.2, 0.2)]) < dw.at_points([(0.3, -0.2)])  # deeper well at c
    assert dw.label == "doublewell"
    tab = Potential.tabulated(vals)
    with pytest.raises(ValueError):
        tab.at_points([[0.0, 0.0]])


def test_problem_validation():
    with pytest.raises(ValueError):
        power_problem(delta=-1.0)
    with pytest.raises(ValueError):
        power_problem(eps=0.0)
    with pytest.raises(ValueError):
        power_problem(R=-5.0)


def test_f_eval_values():
    x = (0.0, 0.0)
    prob = power_problem(4, 0.0)
    assert model.f_eval(prob, x, 0.0) == 0.0
    assert model.f_eval(prob, x, R_V1) == pytest.approx(1 / np.sqrt(3), abs=1e-4)
    prob10 = power_problem(4, 10.0)
    assert model.f_eval(prob10, x, R_V1) == pytest.approx(-9 / np.sqrt(3), abs=1e-3)
    # odd in v for constant V
    v = np.linspace(-4, 4, 17)
    assert np.allclose(model.f_eval(prob10, x, v), -model.f_eval(prob10, x, -v),
                       atol=1e-13)


def test_F_eval_values():
    x = (0.0, 0.0)
    prob = power_problem(4, 0.0)
    assert model.F_eval(prob, x, 0.0) == 0.0
    assert model.F_eval(prob, x, R_V1) == pytest.approx(0.2, abs=1e-4)
    prob10 = power_problem(4, 10.0)
    assert model.F_eval(prob10, x, R_V1) == pytest.approx(-4.8, abs=1e-3)
    # even in v for constant V
    v = np.linspace(-4, 4, 17)
    assert np.allclose(model.F_eval(prob10, x, v), model.F_eval(prob10, x, -v),
                       atol=1e-13)
    # F is the v-antiderivative of f (quadrature oracle)
    got = model.F_eval(prob10, x, 1.7)
    oracle, _ = quad(lambda t: model.f_eval(prob10, x, t), 0.0, 1.7,
                     epsabs=1e-12, epsrel=1e-12)
    assert got == pytest.approx(oracle, rel=1e-9)


def test_exponential_overflow_guard():
    prob = Problem(Nonlinearity.exponential(), Potential.constant(0.0),
                   delta=2.0, R=1.0)
    with pytest.raises(ValueError):
        model.F_eval(prob, (0.0, 0.0), 50.0)   # r(50) > 8


def test_energy_zero_and_lane_emden():
    m = build_mesh(1.0, 16)
    prob0 = power_problem(4, 0.0, delta=0.0)
    zero = FeFunction(m, np.zeros(m.n_nodes))
    assert model.energy_T(prob0, zero) == 0.0
    assert model.energy_E(prob0, zero) == 0.0
    # delta = 0 reduces T to the Lane-Emden functional
    v = smooth_random_field(m, np.random.default_rng(0))
    got = model.energy_T(prob0, v)
    geo = fem.geometry(m)
    manual = (0.5 * fem.grad_sq_form(geo, v.values)
              - fem.integrate(m, lambda x, vv: np.abs(vv) ** 5 / 5.0, funcs=(v,)))
    assert got == pytest.approx(manual, rel=1e-13)


def test_energy_identity_smooth_sample():
    """E(r o v) = T(v) up to interpolation error (full sample in acceptance)."""
    m = build_mesh(1.0, 64)
    prob = power_problem(4, 10.0)
    rng = np.random.default_rng(42)
    for _ in range(20):
        v = smooth_random_field(m, rng)
        u = FeFunction(m, transform.r_eval(v.values, prob.delta))
        T = model.energy_T(prob, v)
        E = model.energy_E(prob, u)
        assert abs(E - T) / max(1.0, abs(T)) <= 2e-3


def test_gradient_zero_and_fd():
    m = build_mesh(1.0, 32)
    prob = power_problem(4, 10.0)
    zero = FeFunction(m, np.zeros(m.n_nodes))
    g = model.gradient_T(prob, zero)
    assert np.all(g.values == 0.0)

    ctx = model.get_functional(prob, m)
    rng = np.random.default_rng(3)
    for _ in range(3):
        v = smooth_random_field(m, rng)
        phi = smooth_random_field(m, rng, amplitude=1.0)
        gv, _ = ctx.gradient(v.values)
        h = 1e-5
        fd = (ctx.energy(v.values + h * phi.values)
              - ctx.energy(v.values - h * phi.values)) / (2 * h)
        K = ctx.stiffness
        inner = gv[K.free] @ (K.matrix @ phi.values[K.free])
        assert abs(fd - inner) <= 1e-5 * max(1.0, abs(fd))


def test_gradient_norm_definition():
    """Reported norm is the eps^2-weighted H1 seminorm of the Riesz gradient."""
    m = build_mesh(1.0, 16)
    prob = power_problem(4, 0.0, eps=0.5)
    v = smooth_random_field(m, np.random.default_rng(9))
    g, norm = model.gradient_norm(prob, v)
    geo = fem.geometry(m)
    assert norm == pytest.approx(
        0.5 * np.sqrt(fem.grad_sq_form(geo, g.values)), rel=1e-10)


def test_f_over_v_monotone():
    """f(v)/v nondecreasing on (0, 50] for p in {3, 4, 6}, delta = 2."""
    x = (0.0, 0.0)
    v = np.linspace(1e-4, 50.0, 10_000)
    for p in (3.0, 4.0, 6.0):
        for V in (0.0, 10.0):
            prob = power_problem(p, V)
            ratio = model.f_eval(prob, x, v) / v
            scale = np.abs(ratio).max()
            assert np.all(np.diff(ratio) >= -1e-12 * scale), (p, V)


def test_pohozaev():
    m = build_mesh(1.0, 32)
    prob = power_problem(4, 0.0)
    zero = FeFunction(m, np.zeros(m.n_nodes))
    assert model.pohozaev_diag(prob, zero) == 0.0
    v = smooth_random_field(m, np.random.default_rng(11))
    diag = model.pohozaev_diag(prob, v)
    assert diag < 0.0
    # equals -2 int F via the generic quadrature route
    oracle = -2.0 * fem.integrate(
        m, lambda x, vv: model.F_eval(prob, x, vv), funcs=(v,))
    assert diag == pytest.approx(oracle, rel=1e-10)
    dw = Problem(Nonlinearity.power(4), Potential.double_well(), delta=2.0, R=1.0)
    with pytest.raises(ValueError):
        model.pohozaev_diag(dw, v)


def test_tabulated_potential_energy_matches_constant():
    m = build_mesh(1.0, 16)
    tab = Problem(Nonlinearity.power(4), Potential.tabulated(np.full(m.n_nodes, 7.0)),
                  delta=2.0, R=1.0)
    const = power_problem(4, 7.0)
    v = smooth_random_field(m, np.random.default_rng(4))
    assert model.energy_T(tab, v) == pytest.approx(model.energy_T(const, v), rel=1e-13)
