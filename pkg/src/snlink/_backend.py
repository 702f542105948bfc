"""Select the compiled kernel module or the numpy fallback at import time.

Set ``SNLINK_PURE_PYTHON=1`` to force the fallback.  ``use_backend`` switches
at run time (tests and benchmarks use it to compare the two).
"""
import os

from . import _fallback

_NAMES = ("se_cross", "se_predict", "aggregate_power_dbm", "student_t_mc_terms", "se_grad_contract")

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKEND = "python"
kernels = _fallback


def available() -> tuple:
    return ("python", "cython") if _compiled is not None else ("python",)


def use_backend(name: str) -> str:
    """Route every kernel through ``"cython"`` or ``"python"``; returns the previous backend."""
    global BACKEND, kernels
    if name not in ("python", "cython"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "cython" and _compiled is None:
        raise ImportError("compiled kernels are not built")
    previous = BACKEND
    kernels = _compiled if name == "cython" else _fallback
    BACKEND = name
    g = globals()
    for n in _NAMES:
        g[n] = getattr(kernels, n)
    return previous


use_backend("cython" if _compiled is not None and not os.environ.get("SNLINK_PURE_PYTHON") else "python")

__all__ = ["BACKEND", "kernels", "available", "use_backend", *_NAMES]
