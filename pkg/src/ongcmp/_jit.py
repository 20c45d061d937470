"""Optional numba acceleration.

Set ``ONGCMP_NO_NUMBA=1`` to force the pure-numpy code paths, which is also
what happens when numba cannot be imported.
"""

import os


def _noop_jit(*args, **kwargs):
    """A decorator that does nothing."""
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(f):
        return f

    return wrap


def _have_numba():
    try:
        import numba  # noqa: F401

        return True
    except ImportError:
        return False


HAVE_NUMBA = _have_numba()
DISABLED = os.environ.get("ONGCMP_NO_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")
USE_NUMBA = HAVE_NUMBA and not DISABLED

if HAVE_NUMBA:
    from numba import njit
else:
    njit = _noop_jit
