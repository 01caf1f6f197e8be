"""JIT switch for the numeric kernels.

Kernels are written once in the numba-compatible subset of numpy and
compiled with ``numba.njit`` unless ``BARRIERDIFF_DISABLE_JIT`` is set to a
truthy value (or numba is missing), in which case the same functions run
as plain Python/numpy.
"""

import os

_FLAG = os.environ.get("BARRIERDIFF_DISABLE_JIT", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

JIT_ENABLED = numba is not None and _FLAG in ("", "0", "false", "no")


def jit(fn):
    """Compile ``fn`` in nopython mode when the JIT is enabled.

    The original Python function stays reachable as ``fn.py_func`` in both
    modes so callers (tests, benchmarks) can compare the two paths.
    """
    if JIT_ENABLED:
        return numba.njit(cache=True, nogil=True)(fn)
    fn.py_func = fn
    return fn
