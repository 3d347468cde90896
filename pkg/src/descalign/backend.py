"""Kernel backend selection.

Hot numeric kernels (nearest-neighbor cosine search, convolution) exist in
two interchangeable implementations: a numba ``@njit`` version and a pure
numpy fallback.  Both evaluate the same arithmetic in the same order, so
they produce bit-identical results; the fallback exists for environments
without a working numba and as the reference implementation.

Selection order: an active :func:`use` override, then the ``DA_BACKEND``
environment variable (``numba`` or ``numpy``), then ``numba`` when it
imports cleanly.
"""

from __future__ import annotations

import contextlib
import os

from . import _kernels_numpy

try:
    from . import _kernels_numba
    HAS_NUMBA = True
except ImportError:
    _kernels_numba = None
    HAS_NUMBA = False

_override: str | None = None

_ENV_VAR = "DA_BACKEND"
_NAMES = ("numba", "numpy")


def available_backends() -> tuple[str, ...]:
    return _NAMES if HAS_NUMBA else ("numpy",)


def active_backend() -> str:
    """Name of the backend that :func:`kernels` would return."""
    name = _override or os.environ.get(_ENV_VAR)
    if name is None:
        return "numba" if HAS_NUMBA else "numpy"
    if name not in _NAMES:
        raise ValueError(f"unknown backend {name!r}; expected one of {_NAMES}")
    if name == "numba" and not HAS_NUMBA:
        raise ValueError("numba backend requested but numba is not importable")
    return name


def kernels(name: str | None = None):
    """Return the kernel module for ``name`` (default: active backend)."""
    name = name or active_backend()
    if name == "numba":
        if not HAS_NUMBA:
            raise ValueError("numba backend requested but numba is not importable")
        return _kernels_numba
    if name == "numpy":
        return _kernels_numpy
    raise ValueError(f"unknown backend {name!r}; expected one of {_NAMES}")


@contextlib.contextmanager
def use(name: str):
    """Force a backend within a ``with`` block (tests, benchmarks)."""
    global _override
    kernels(name)  # validate eagerly
    previous = _override
    _override = name
    try:
        yield
    finally:
        _override = previous
