"""Backend selection for the compiled kernels.

Set ``FRACDISP_DISABLE_NUMBA=1`` to force the pure-numpy code paths (useful
when debugging, profiling, or on platforms without numba).
"""

import os

_FLAG = "FRACDISP_DISABLE_NUMBA"

try:  # pragma: no cover - exercised implicitly
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def numba_disabled() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


def use_numba() -> bool:
    """True when compiled kernels should be used for the current process."""
    return HAVE_NUMBA and not numba_disabled()


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching, or a no-op when numba is absent."""
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def resolve_backend(backend=None) -> str:
    if backend is None:
        return "numba" if use_numba() else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend
