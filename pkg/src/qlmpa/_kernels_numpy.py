"""Pure-numpy fallback for the hot kernels.

Same contracts as _kernels_numba (including NaN signalling for the
exponential-primitive overflow), implemented with vectorized array sweeps.
Selected when QLMPA_PURE_NUMPY=1 or when numba is not importable.
"""

import numpy as np

KIND_POWER = 0
KIND_EXP = 1


def r_eval_arr(s, delta):
    """Invert G(u) = int_0^u sqrt(1 + delta t^2) dt at G = s, elementwise.

    Same substitution as the numba backend: u = sinh(z/2)/sqrt(delta) turns
    the equation into sinh(z) + z = 4 sqrt(delta) s, convex with the root
    bounded above by asinh of the right side, so plain Newton clipped at
    zero converges monotonically.
    """
    s = np.asarray(s, dtype=np.float64)
    if delta == 0.0:
        return s.copy()
    a = np.abs(s)
    sq = np.sqrt(delta)
    c = 4.0 * sq * a
    z = np.arcsinh(c)
    tol = 1e-12 * (4.0 * sq + c)
    for _ in range(60):
        e = np.exp(z)
        ei = 1.0 / e
        err = 0.5 * (e - ei) + z - c
        if np.all(np.abs(err) <= tol):
            break
        z = np.maximum(z - err / (0.5 * (e + ei) + 1.0), 0.0)
    em = np.expm1(0.5 * z)
    u = em * (em + 2.0) / (2.0 * (em + 1.0) * sq)
    return np.copysign(u, s)


def r_prime_arr(s, delta):
    r = r_eval_arr(s, delta)
    return 1.0 / np.sqrt(1.0 + delta * r * r)


def _G_exp(x):
    """Primitive of exp(t^2)-1 on [0, x], x >= 0; NaN where x > 8."""
    bad = x > 8.0
    xs = np.where(bad, 0.0, x)
    x2 = xs * xs
    term = xs * x2 / 3.0
    total = term.copy()
    for k in range(2, 400):
        term = term * x2 * ((2.0 * k - 1.0) / (k * (2.0 * k + 1.0)))
        total += term
        if np.all(term <= 1e-16 * np.maximum(total, 1e-300)):
            break
    total[bad] = np.nan
    return total


def _g_nl(r, kind, p):
    if kind == KIND_POWER:
        return np.sign(r) * np.abs(r) ** p
    a = np.abs(r)
    out = np.where(a > 8.0, np.nan, np.sign(r) * np.expm1(np.minimum(a, 8.0) ** 2))
    return out


def _gprime_nl(r, kind, p):
    if kind == KIND_POWER:
        return p * np.abs(r) ** (p - 1.0)
    a = np.abs(r)
    return np.where(a > 8.0, np.nan, 2.0 * a * np.exp(np.minimum(a, 8.0) ** 2))


def G_arr(u, kind, p):
    if kind == KIND_POWER:
        return np.abs(u) ** (p + 1.0) / (p + 1.0)
    return _G_exp(np.abs(u))


def f_arr(v, V, delta, kind, p):
    r = r_eval_arr(v, delta)
    rp = 1.0 / np.sqrt(1.0 + delta * r * r)
    return rp * (_g_nl(r, kind, p) - V * r)


def fprime_arr(v, V, delta, kind, p):
    r = r_eval_arr(v, delta)
    rp2 = 1.0 / (1.0 + delta * r * r)
    return rp2 * (_gprime_nl(r, kind, p) - V) \
        - delta * r * rp2 * rp2 * (_g_nl(r, kind, p) - V * r)


def F_total(t, w, V, qw, delta, kind, p):
    r = r_eval_arr(t * w, delta)
    F = G_arr(r, kind, p) - 0.5 * V * r * r
    return float(qw @ F)
