"""Numba-compiled inner loops.

These are the hot kernels of the solver: pointwise inversion of the change
of variable, the nonlinear terms f, df/dv and the quadrature accumulation
of the energy density.  All reductions are chunked with a fixed chunk size
and summed in chunk order, so results are bit-identical for any thread
count (set threads with NUMBA_NUM_THREADS).

Overflow of the exponential primitive (|u| > 8) is signalled by NaN; the
callers turn non-finite results into errors.
"""

import math

import numpy as np
from numba import njit, prange

# fixed chunking keeps parallel reductions deterministic
_CHUNK = 4096

KIND_POWER = 0
KIND_EXP = 1


@njit(cache=True)
def _r_scalar(s, delta):
    """Invert G(u) = int_0^u sqrt(1 + delta t^2) dt at G = s.

    With u = sinh(z/2)/sqrt(delta) the equation becomes
    sinh(z) + z = 4 sqrt(delta) s, solved by safeguarded Newton: the left
    side is convex and increasing on z >= 0 and z0 = asinh(c) bounds the
    root from above, so the iteration decreases monotonically; the stop
    test |sinh z + z - c| <= 1e-12 (4 sqrt(delta) + c) is the requested
    |G(u) - s| <= 1e-12 (1 + |s|).
    """
    if delta == 0.0 or s == 0.0:
        return s
    a = abs(s)
    sq = math.sqrt(delta)
    c = 4.0 * sq * a
    z = math.asinh(c)
    lo = 0.0
    tol = 1e-12 * (4.0 * sq + c)
    for _ in range(60):
        e = math.exp(z)
        ei = 1.0 / e
        err = 0.5 * (e - ei) + z - c
        if abs(err) <= tol:
            break
        zn = z - err / (0.5 * (e + ei) + 1.0)
        if zn <= lo:
            zn = 0.5 * (lo + z)
        if err < 0.0:
            lo = z
        z = zn
    em = math.expm1(0.5 * z)
    u = em * (em + 2.0) / (2.0 * (em + 1.0) * sq)
    if s < 0.0:
        return -u
    return u


@njit(cache=True)
def _G_exp(x):
    """Primitive of exp(t^2)-1 on [0, x] by power series; NaN for x > 8."""
    if x > 8.0:
        return np.nan
    if x == 0.0:
        return 0.0
    x2 = x * x
    term = x * x2 / 3.0
    total = term
    for k in range(2, 400):
        term *= x2 * (2.0 * k - 1.0) / (k * (2.0 * k + 1.0))
        total += term
        if term <= 1e-16 * total:
            break
    return total


@njit(cache=True)
def _g_nl(r, kind, p):
    """Odd nonlinearity g(r): |r|^(p-1) r or sign(r) (exp(r^2)-1)."""
    if kind == KIND_POWER:
        if r == 0.0:
            return 0.0
        return math.copysign(abs(r) ** p, r)
    a = abs(r)
    if a > 8.0:
        return np.nan
    return math.copysign(math.exp(a * a) - 1.0, r)


@njit(cache=True)
def _gprime_nl(r, kind, p):
    if kind == KIND_POWER:
        if r == 0.0:
            return 0.0
        return p * abs(r) ** (p - 1.0)
    a = abs(r)
    if a > 8.0:
        return np.nan
    return 2.0 * a * math.exp(a * a)


@njit(cache=True)
def _F_point(v, V, delta, kind, p):
    r = _r_scalar(v, delta)
    if kind == KIND_POWER:
        G = abs(r) ** (p + 1.0) / (p + 1.0)
    else:
        G = _G_exp(abs(r))
    return G - 0.5 * V * r * r


@njit(cache=True, parallel=True)
def r_eval_arr(s, delta):
    out = np.empty_like(s)
    for i in prange(s.shape[0]):
        out[i] = _r_scalar(s[i], delta)
    return out


@njit(cache=True, parallel=True)
def r_prime_arr(s, delta):
    out = np.empty_like(s)
    for i in prange(s.shape[0]):
        r = _r_scalar(s[i], delta)
        out[i] = 1.0 / math.sqrt(1.0 + delta * r * r)
    return out


@njit(cache=True, parallel=True)
def G_arr(u, kind, p):
    out = np.empty_like(u)
    for i in prange(u.shape[0]):
        if kind == KIND_POWER:
            out[i] = abs(u[i]) ** (p + 1.0) / (p + 1.0)
        else:
            out[i] = _G_exp(abs(u[i]))
    return out


@njit(cache=True, parallel=True)
def f_arr(v, V, delta, kind, p):
    """f(x,v) = r'(v) * (g(r(v)) - V(x) r(v)) evaluated elementwise."""
    out = np.empty_like(v)
    for i in prange(v.shape[0]):
        r = _r_scalar(v[i], delta)
        rp = 1.0 / math.sqrt(1.0 + delta * r * r)
        out[i] = rp * (_g_nl(r, kind, p) - V[i] * r)
    return out


@njit(cache=True, parallel=True)
def fprime_arr(v, V, delta, kind, p):
    """df/dv = r'^2 (g'(r) - V) - delta r r'^4 (g(r) - V r)."""
    out = np.empty_like(v)
    for i in prange(v.shape[0]):
        r = _r_scalar(v[i], delta)
        rp2 = 1.0 / (1.0 + delta * r * r)
        out[i] = rp2 * (_gprime_nl(r, kind, p) - V[i]) \
            - delta * r * rp2 * rp2 * (_g_nl(r, kind, p) - V[i] * r)
    return out


@njit(cache=True, parallel=True)
def F_total(t, w, V, qw, delta, kind, p):
    """sum_i qw[i] * F(x_i, t*w[i]) with F = G(r(v)) - V r(v)^2 / 2."""
    n = w.shape[0]
    nchunks = (n + _CHUNK - 1) // _CHUNK
    partial = np.zeros(nchunks)
    for c in prange(nchunks):
        lo = c * _CHUNK
        hi = min(lo + _CHUNK, n)
        acc = 0.0
        for i in range(lo, hi):
            acc += qw[i] * _F_point(t * w[i], V[i], delta, kind, p)
        partial[c] = acc
    total = 0.0
    for c in range(nchunks):
        total += partial[c]
    return total
