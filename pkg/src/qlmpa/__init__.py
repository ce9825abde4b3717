"""Mountain-pass ground states of quasi-linear Schrodinger equations.

Solves -eps^2 (Delta u + u Delta u^2) + V(x) u = g(u) on square domains by
a change of variable u = r_delta(v) and a peak-selection mountain pass
algorithm over a P1 finite-element discretization.
"""

from ._kernels import BACKEND
from .fem import FeFunction, SparseOperator, assemble_stiffness, integrate, norms, solve_dirichlet
from .mesh import Mesh, audit_mesh, build_mesh, refine_adaptive, refine_uniform
from .model import (Nonlinearity, Potential, Problem, F_eval, energy_E, energy_T,
                    f_eval, gradient_T, pohozaev_diag)
from .mpa import (MpaConfig, MpaResult, ReportRow, cone_project, mpa_step,
                  newton_refine, peak_select, run_mpa)
from .transform import ChangeOfVariable, r_eval, r_inverse, r_prime

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ChangeOfVariable", "FeFunction", "Mesh", "MpaConfig", "MpaResult",
    "Nonlinearity", "Potential", "Problem", "ReportRow", "SparseOperator",
    "assemble_stiffness", "audit_mesh", "build_mesh", "cone_project", "energy_E",
    "energy_T", "F_eval", "f_eval", "gradient_T", "integrate", "mpa_step",
    "newton_refine", "norms", "peak_select", "pohozaev_diag", "r_eval",
    "r_inverse", "r_prime", "refine_adaptive", "refine_uniform", "run_mpa",
    "solve_dirichlet",
]
