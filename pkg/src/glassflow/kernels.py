"""Import-time choice between the compiled kernel and the Python fallback.

Set ``GLASSFLOW_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
glauber_events = _kernels_py.glauber_events
generic_events = _kernels_py.generic_events

if os.environ.get("GLASSFLOW_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None
    if _compiled is not None:
        glauber_events = _compiled.glauber_events
        BACKEND = "cython"


def get_backend(name: str | None = None):
    """Return ``glauber_events`` for ``name`` ('cython' or 'python')."""
    if name in (None, BACKEND):
        return glauber_events
    if name == "python":
        return _kernels_py.glauber_events
    if name == "cython":
        from . import _kernels

        return _kernels.glauber_events
    raise ValueError(f"unknown backend {name!r}")
