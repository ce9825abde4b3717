"""Peak selection, cone projection, stepsize search and Newton polish."""

import numpy as np
import pytest

from qlmpa import model, mpa
from qlmpa.fem import FeFunction
from qlmpa.mesh import build_mesh
from qlmpa.model import Nonlinearity, Potential, Problem
from qlmpa.mpa import (MpaConfig, cone_project, mpa_step, newton_refine,
                       peak_select, run_mpa)

from _util import bump_field, smooth_random_field


def power_problem(p=4.0, V=0.0, R=1.0):
    return Problem(Nonlinearity.power(p), Potential.constant(V), delta=2.0, R=R)


def nonneg_random(msh, rng):
    v = smooth_random_field(msh, rng)
    vals = np.abs(v.values)
    vals[msh.boundary_mask] = 0.0
    return FeFunction(msh, vals)


def test_cone_project():
    m = build_mesh(1.0, 2)
    vals = np.zeros(m.n_nodes)
    free = np.flatnonzero(~m.boundary_mask)
    assert len(free) == 1
    vals[free[0]] = 3.0
    v = FeFunction(m, vals)
    assert np.array_equal(cone_project(v).values, vals)        # already in K
    neg = FeFunction(m, -vals)
    assert not cone_project(neg).values.any()                  # fully clipped
    # componentwise rule, boundary zeros preserved
    mixed = FeFunction(build_mesh(1.0, 1), np.array([1.0, -2.0, 0.5, 0.0]))
    assert np.array_equal(cone_project(mixed).values, [1.0, 0.0, 0.5, 0.0])


def test_peak_select_validation():
    m = build_mesh(1.0, 4)
    prob = power_problem()
    with pytest.raises(ValueError):
        peak_select(prob, FeFunction(m, np.zeros(m.n_nodes)))
    vals = np.zeros(m.n_nodes)
    vals[~m.boundary_mask] = -1.0
    with pytest.raises(ValueError):
        peak_select(prob, FeFunction(m, vals))


def test_peak_select_idempotent_and_scale_invariant():
    m = build_mesh(1.0, 16)
    prob = power_problem(4, 0.0)
    rng = np.random.default_rng(0)
    for _ in range(5):
        v = nonneg_random(m, rng)
        t1, peaked = peak_select(prob, v)
        t2, peaked2 = peak_select(prob, peaked)
        assert abs(t2 - 1.0) <= 1e-6
        scale = np.abs(peaked.values).max()
        for lam in (0.1, 10.0):
            _, peaked_lam = peak_select(prob, FeFunction(m, lam * v.values))
            assert np.max(np.abs(peaked_lam.values - peaked.values)) <= 1e-8 * scale


def test_peak_select_brute_force():
    """Brent maximizer against a 10^4-point ray scan."""
    m = build_mesh(1.0, 16)
    prob = power_problem(4, 0.0)
    ctx = model.get_functional(prob, m)
    rng = np.random.default_rng(1)
    for _ in range(10):
        v = nonneg_random(m, rng)
        t_star, _ = peak_select(prob, v)
        # independent doubling for the bracket
        t1 = 1.0
        while ctx.energy(t1 * v.values) > 0:
            t1 *= 2.0
        grid = np.linspace(0.0, t1, 10_001)
        energies = [ctx.energy(t * v.values) for t in grid]
        t_scan = grid[int(np.argmax(energies))]
        assert abs(t_star - t_scan) <= t1 / 10_000


def test_peak_select_no_sign_change():
    """Subcritical growth (p = 2 under delta = 2) never turns the ray negative."""
    m = build_mesh(1.0, 8)
    prob = power_problem(2.0, 0.0)   # F(t v) ~ t^1.5, dominated by the t^2 term
    rng = np.random.default_rng(2)
    with pytest.raises(mpa.PeakSelectionError, match="no sign change"):
        peak_select(prob, nonneg_random(m, rng))


def test_mpa_step_descends_and_stays_on_manifold():
    m = build_mesh(1.0, 12)
    prob = power_problem(4, 0.0)
    cfg = MpaConfig(refine_every=0)
    rng = np.random.default_rng(5)
    _, u = peak_select(prob, nonneg_random(m, rng))
    T0 = model.energy_T(prob, u)
    _, gnorm = model.gradient_norm(prob, u)
    u1, s = mpa_step(prob, cfg, u)
    T1 = model.energy_T(prob, u1)
    assert T1 < T0                                   # descent
    assert T1 - T0 < -0.5 * s * gnorm                # the admissible-step inequality
    t_recheck, _ = peak_select(prob, u1)
    assert abs(t_recheck - 1.0) <= 1e-6              # u1 in Ran(P)
    assert np.all(u1.values >= 0.0)


def test_mpa_step_matches_scan_oracle():
    """Accepted stepsize against a 10^3-point scan of s -> T(P(P_K(u[s])))."""
    m = build_mesh(1.0, 3)    # 4 interior nodes: small but nontrivial
    prob = power_problem(4, 0.0)
    cfg = MpaConfig(refine_every=0)
    vals = np.zeros(m.n_nodes)
    vals[~m.boundary_mask] = (1.0, 0.6, 0.8, 0.9)
    _, u = peak_select(prob, FeFunction(m, vals))
    g, gnorm = model.gradient_norm(prob, u)
    assert gnorm > cfg.grad_tol
    d = g.values / gnorm

    def phi(s):
        w = np.maximum(u.values - s * d, 0.0)
        if not w.any():
            return np.inf
        _, peaked = peak_select(prob, FeFunction(m, w))
        return model.energy_T(prob, peaked)

    grid = np.linspace(0.0, cfg.s_max, 1001)[1:]
    s_scan = grid[int(np.argmin([phi(s) for s in grid]))]
    _, s_accepted = mpa_step(prob, cfg, u)
    assert abs(s_accepted - s_scan) <= cfg.s_max / 1000


_small_cache = {}


def run_small(V=10.0, p=4.0, R=5.0, n=48, scale=1.0, max_iter=400):
    key = (V, p, R, n, scale, max_iter)
    if key not in _small_cache:
        prob = power_problem(p, V, R)
        m = build_mesh(R, n)
        guess = bump_field(m)
        guess.values *= scale
        _small_cache[key] = (prob, run_mpa(prob, MpaConfig(refine_every=0,
                                                           s_max=50.0,
                                                           max_iter=max_iter),
                                           guess))
    return _small_cache[key]


def test_run_mpa_small_converges():
    prob, res = run_small()
    assert res.converged
    assert res.report.grad_norm <= 1e-7
    # iterate log: monotone energies and the decrease inequality per step
    hist = res.history
    for prev, rec in zip(hist, hist[1:]):
        if rec.step > 0 and prev.n_nodes == rec.n_nodes:
            assert rec.energy - prev.energy < -0.5 * rec.step * rec.grad_norm
    # solution_u is the nodal change of variable of solution_v
    from qlmpa import transform
    assert np.max(np.abs(res.solution_u.values
                         - transform.r_eval(res.solution_v.values, prob.delta))) <= 1e-12


def test_run_mpa_zero_safe_scaling():
    """A 1e-6-scaled guess lands on the same solution (scale-invariant P)."""
    _, res1 = run_small(scale=1.0)
    _, res2 = run_small(scale=1e-6)
    assert abs(res2.report.energy - res1.report.energy) <= 0.01 * abs(res1.report.energy)
    assert abs(res2.report.max_v - res1.report.max_v) <= 0.01 * res1.report.max_v


def test_run_mpa_determinism():
    prob = power_problem(4.0, 10.0, 5.0)
    results = []
    for _ in range(2):
        m = build_mesh(5.0, 32)
        res = run_mpa(prob, MpaConfig(refine_every=0, s_max=50.0),
                      bump_field(m))
        results.append(res.report)
    assert results[0] == results[1]   # bitwise-identical report rows


def test_run_mpa_validation():
    m = build_mesh(1.0, 4)
    prob = power_problem()
    cfg = MpaConfig()
    with pytest.raises(ValueError):
        run_mpa(prob, cfg, FeFunction(m, np.zeros(m.n_nodes)))
    vals = np.zeros(m.n_nodes)
    vals[~m.boundary_mask] = -0.5
    with pytest.raises(ValueError):
        run_mpa(prob, cfg, FeFunction(m, vals))


def test_run_mpa_max_iter_flagged():
    prob = power_problem(4, 10.0, R=5.0)
    m = build_mesh(5.0, 24)
    res = run_mpa(prob, MpaConfig(max_iter=2, refine_every=0, newton_iters=0),
                  bump_field(m))
    assert not res.converged
    assert "max-iter" in res.flags
    assert res.report.iterations == 2


def test_newton_fixed_point_and_quadratic_rate():
    prob, res = run_small(n=32)
    v = res.solution_v
    # applying the polish to a converged solution barely moves it
    again = newton_refine(prob, v, 4)
    denom = max(1.0, np.abs(v.values).max())
    assert np.max(np.abs(again.values - v.values)) <= 1e-12 * denom
    # residual history decays at least quadratically until the floor
    r = res.newton_residuals
    drops = [r[k + 1] / r[k] ** 2 for k in range(len(r) - 1)
             if r[k] > 1e-9 and r[k + 1] > 0]
    assert len(drops) >= 1
    assert all(c < 1e3 for c in drops)


def test_config_validation():
    with pytest.raises(ValueError):
        MpaConfig(grad_tol=0.0)
    with pytest.raises(ValueError):
        MpaConfig(refine_fraction=2.0)
    with pytest.raises(ValueError):
        MpaConfig(s_max=-1.0)
