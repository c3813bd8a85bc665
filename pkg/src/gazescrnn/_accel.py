"""Backend selection for the hot kernels.

Kernels come in two flavours: numba ``@njit`` loops and vectorised numpy.
The numba path is used when numba imports cleanly and the environment
variable ``GAZESCRNN_NUMBA`` is not set to ``0``.
"""

import contextlib
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def njit_opts():
    return dict(cache=True, nogil=True, fastmath=False, error_model="numpy")


def njit(fn):
    """``numba.njit`` with the package options, or the plain function."""
    if HAVE_NUMBA:
        return numba.njit(**njit_opts())(fn)
    return fn


_use_numba = HAVE_NUMBA and os.environ.get("GAZESCRNN_NUMBA", "1") != "0"


def use_numba():
    return _use_numba


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` kernels process-wide."""
    global _use_numba
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not installed")
        _use_numba = True
    elif name == "numpy":
        _use_numba = False
    else:
        raise ValueError(f"unknown backend {name!r}")


def backend():
    return "numba" if _use_numba else "numpy"


@contextlib.contextmanager
def backend_scope(name):
    prev = backend()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)
