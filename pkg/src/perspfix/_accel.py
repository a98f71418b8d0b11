"""Backend selection for the hot kernels.

Set ``PERSPFIX_BACKEND=numpy`` to force the pure-numpy paths (numba is also
skipped automatically when it cannot be imported).
"""

import os
import warnings

try:
    import numba

    HAS_NUMBA = True
    warnings.filterwarnings("ignore", message=".*TBB threading layer.*")
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

_VALID = ("numba", "numpy")
_backend = os.environ.get("PERSPFIX_BACKEND", "numba").strip().lower()
if _backend not in _VALID:
    raise RuntimeError(f"PERSPFIX_BACKEND must be one of {_VALID}, got {_backend!r}")
if not HAS_NUMBA:
    _backend = "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or a no-op decorator when numba is missing."""
    kwargs.setdefault("cache", True)
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


prange = numba.prange if HAS_NUMBA else range


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> str:
    """Switch backend at runtime; returns the previous one."""
    global _backend
    name = name.lower()
    if name not in _VALID:
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    prev, _backend = _backend, name
    return prev


def use_numba() -> bool:
    return _backend == "numba"
