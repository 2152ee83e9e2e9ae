"""Geometry kernel dispatch.

The compiled extension is used when it was built; otherwise the numpy
reference takes over.  Set ``RECGAN3D_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _reference

BACKEND = "python"
_impl = _reference

if os.environ.get("RECGAN3D_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _fast as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass

cast_rays = _impl.cast_rays
sample_triangles = _impl.sample_triangles
cell_index = _reference.cell_index
mark_points = _reference.mark_points


def backends():
    """All importable backends, keyed by name (for tests and benchmarks)."""
    found = {"python": _reference}
    try:
        from . import _fast
        found["cython"] = _fast
    except ImportError:
        pass
    return found
