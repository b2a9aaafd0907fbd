"""Kernel backend selection.

The tape sweep kernels exist in two functionally identical flavours: a
numba-jitted one and a pure-Python/NumPy one. The active flavour is chosen
once at import from the ``PINNKIT_BACKEND`` environment variable
("numba" or "numpy"); when unset, numba is used if it imports. Tests and
benchmarks may switch at runtime through :func:`set_backend`.
"""

import os

ENV_VAR = "PINNKIT_BACKEND"

NUMBA = "numba"
NUMPY = "numpy"


def _numba_importable() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _detect() -> str:
    choice = os.environ.get(ENV_VAR, "").strip().lower()
    if choice in (NUMPY, "python"):
        return NUMPY
    if choice == NUMBA:
        if not _numba_importable():
            raise ImportError(
                f"{ENV_VAR}={NUMBA} requested but numba is not importable"
            )
        return NUMBA
    if choice:
        raise ValueError(f"unknown {ENV_VAR} value {choice!r}; use 'numba' or 'numpy'")
    return NUMBA if _numba_importable() else NUMPY


_active = _detect()


def active_backend() -> str:
    return _active


def using_numba() -> bool:
    return _active == NUMBA


def set_backend(name: str) -> str:
    """Switch backends at runtime; returns the previous one."""
    global _active
    if name not in (NUMBA, NUMPY):
        raise ValueError(f"unknown backend {name!r}")
    if name == NUMBA and not _numba_importable():
        raise ImportError("numba backend requested but numba is not importable")
    previous = _active
    _active = name
    return previous
