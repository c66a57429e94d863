"""Kernel backend selection.

The hot paths (batch forward and backprop-through-time) exist twice: a
compiled Cython extension (``_core``) and a pure-numpy fallback
(``_ref``). The compiled module is preferred when importable; set
``ROM_KERNEL=python`` or ``ROM_KERNEL=cython`` to force one side (the
benchmark and the cross-backend tests do).
"""

import os
import warnings

from . import _ref


def _load_backend():
    choice = os.environ.get("ROM_KERNEL", "auto").lower()
    if choice not in ("auto", "python", "cython"):
        raise ValueError(f"ROM_KERNEL must be auto|python|cython, got {choice!r}")
    if choice == "python":
        return _ref, "python"
    try:
        from . import _core
    except ImportError:
        if choice == "cython":
            raise
        warnings.warn("compiled rom kernels unavailable, using the numpy fallback", stacklevel=2)
        return _ref, "python"
    return _core, "cython"


_backend, BACKEND_NAME = _load_backend()

forward_scores = _backend.forward_scores
loss_and_grad = _backend.loss_and_grad
init_memory = _ref.init_memory


def available_backends():
    names = ["python"]
    try:
        from . import _core  # noqa: F401
    except ImportError:
        pass
    else:
        names.append("cython")
    return names


def get_backend(name):
    """Explicit backend lookup, independent of the import-time choice."""
    if name == "python":
        return _ref
    if name == "cython":
        from . import _core

        return _core
    raise ValueError(f"unknown kernel backend {name!r}")
