"""Change of variable u = r_delta(v).

r_delta is the solution of the Cauchy problem

    r'(s) = 1 / sqrt(1 + delta r(s)^2),   r(0) = 0,

which straightens the quasi-linear gradient term: delta = 2 gives the
quasi-linear Schrodinger problem, delta = 0 the Lane-Emden limit (identity
map).  Its inverse has the elementary antiderivative

    G(u) = int_0^u sqrt(1 + delta t^2) dt
         = u sqrt(1 + delta u^2)/2 + asinh(sqrt(delta) u)/(2 sqrt(delta)),

so r is evaluated by inverting G with a safeguarded Newton iteration
instead of tabulating the ODE.  All maps are odd; r' takes values in (0,1].
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels


def _check_delta(delta):
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")


def r_inverse(u, delta):
    """G_delta(u), the inverse map of r_delta, in closed form."""
    _check_delta(delta)
    u = np.asarray(u, dtype=np.float64)
    if delta == 0.0:
        out = u.copy()
    else:
        sq = np.sqrt(delta)
        out = 0.5 * u * np.sqrt(1.0 + delta * u * u) + np.arcsinh(sq * u) / (2.0 * sq)
    return out if out.ndim else float(out)

def r_eval(s, delta):
    """r_delta(s): unique u with r_inverse(u, delta) = s."""
    _check_delta(delta)
    s = np.asarray(s, dtype=np.float64)
    out = _kernels.r_eval_arr(np.atleast_1d(s), delta)
    return out.reshape(s.shape) if s.ndim else float(out[0])


def r_prime(s, delta):
    """r_delta'(s) = 1 / sqrt(1 + delta r_delta(s)^2)."""
    _check_delta(delta)
    s = np.asarray(s, dtype=np.float64)
    out = _kernels.r_prime_arr(np.atleast_1d(s), delta)
    return out.reshape(s.shape) if s.ndim else float(out[0])


@dataclass(frozen=True)
class ChangeOfVariable:
    """The map r_delta bundled with its derivative and inverse."""

    delta: float

    def __post_init__(self):
        _check_delta(self.delta)

    def eval(self, s):
        return r_eval(s, self.delta)

    def inverse(self, u):
        return r_inverse(u, self.delta)

    def prime(self, s):
        return r_prime(s, self.delta)
