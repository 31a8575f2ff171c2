"""Kernel backend selection.

The compiled extension is preferred; ``LMASPATIAL_BACKEND=python`` forces the
pure-Python fallback (useful for debugging and for the benchmark).
"""
import os
import warnings

_requested = os.environ.get("LMASPATIAL_BACKEND", "").strip().lower()

if _requested == "python":
    from . import _pykernels as kernels
else:
    try:
        from . import _kernels as kernels
    except ImportError:
        if _requested in ("cython", "compiled"):
            warnings.warn("compiled kernels requested but not importable; using pure Python")
        from . import _pykernels as kernels

BACKEND = kernels.NAME


def available_backends():
    """Return ``{name: module}`` for every importable kernel implementation."""
    from . import _pykernels

    found = {"python": _pykernels}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        found["cython"] = _kernels
    return found
