"""Kernel backend selection.

The numba backend is used by default; set QLMPA_PURE_NUMPY=1 to force the
pure-numpy path (also taken automatically if numba is unavailable).
benchmarks/kernel_bench.py compares the two.
"""

import os

_force_numpy = os.environ.get("QLMPA_PURE_NUMPY", "").lower() in ("1", "true", "yes")

if _force_numpy:
    from ._kernels_numpy import (  # noqa: F401
        KIND_EXP, KIND_POWER, F_total, G_arr, f_arr, fprime_arr,
        r_eval_arr, r_prime_arr,
    )
    BACKEND = "numpy"
else:
    try:
        from ._kernels_numba import (  # noqa: F401
            KIND_EXP, KIND_POWER, F_total, G_arr, f_arr, fprime_arr,
            r_eval_arr, r_prime_arr,
        )
        BACKEND = "numba"
    except ImportError:
        from ._kernels_numpy import (  # noqa: F401
            KIND_EXP, KIND_POWER, F_total, G_arr, f_arr, fprime_arr,
            r_eval_arr, r_prime_arr,
        )
        BACKEND = "numpy"
