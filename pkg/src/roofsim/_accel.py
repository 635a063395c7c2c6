"""Numba acceleration shim.

Hot kernels (the cache-simulator inner loop, CRS matvec, Gauss-Seidel
sweeps) are compiled with numba when available.  Setting the environment
variable ``ROOFSIM_NO_NUMBA=1`` before import selects the pure-Python
fallback path; the same source runs uncompiled, which is slow but handy
for debugging and as a correctness reference (see benchmarks/).
"""

import os

NUMBA_DISABLED = os.environ.get("ROOFSIM_NO_NUMBA", "").lower() in ("1", "true", "yes")

if not NUMBA_DISABLED:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_DISABLED = True

NUMBA_ENABLED = not NUMBA_DISABLED


def jit(func=None, **kwargs):
    """``numba.njit`` or a no-op, depending on ROOFSIM_NO_NUMBA."""
    if func is None:
        return lambda f: jit(f, **kwargs)
    if NUMBA_DISABLED:
        return func
    kwargs.setdefault("cache", True)
    return _njit(**kwargs)(func)


def python_impl(func):
    """Return the uncompiled Python implementation of a jitted function."""
    return getattr(func, "py_func", func)
