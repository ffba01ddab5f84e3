"""Pick the compiled kernels when they were built, else the numpy fallback.

Set ``BGMD_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

_FORCE_PURE = os.environ.get("BGMD_PURE_PYTHON", "").lower() in ("1", "true", "yes")

try:
    if _FORCE_PURE:
        raise ImportError("pure-python backend requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
kernels = _compiled if _compiled is not None else _fallback


def get_kernels(name=None):
    """Return the kernel module for ``name`` ("compiled", "python" or None = active)."""
    if name is None:
        return kernels
    if name == "python":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this install")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def compiled_available():
    return _compiled is not None
