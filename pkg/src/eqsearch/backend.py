"""Selects the expression-evaluation backend at import time.

The compiled kernel (`_evalcore`, Cython) is preferred; the numpy
implementation (`_evalpy`) is a drop-in fallback with identical semantics.
Set the environment variable EQSEARCH_BACKEND to "python" or "compiled" to
force one side (tests and the benchmark do this).
"""

import os

from . import _evalpy

try:
    from . import _evalcore
except ImportError:  # pragma: no cover - depends on the build
    _evalcore = None

AVAILABLE = {"python": _evalpy}
if _evalcore is not None:
    AVAILABLE["compiled"] = _evalcore

_forced = os.environ.get("EQSEARCH_BACKEND", "")
if _forced:
    if _forced not in AVAILABLE:
        raise ImportError(
            f"EQSEARCH_BACKEND={_forced!r} requested but only "
            f"{sorted(AVAILABLE)} are available"
        )
    BACKEND = _forced
else:
    BACKEND = "compiled" if _evalcore is not None else "python"

_impl = AVAILABLE[BACKEND]


def execute(codes, iargs, dargs, xs, constants):
    return _impl.execute(codes, iargs, dargs, xs, constants)


def use(name):
    """Switch backend at runtime ("python" or "compiled")."""
    global _impl, BACKEND
    if name not in AVAILABLE:
        raise ValueError(f"backend {name!r} not available, have {sorted(AVAILABLE)}")
    BACKEND = name
    _impl = AVAILABLE[name]
