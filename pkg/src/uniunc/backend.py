"""Kernel backend selection.

Two interchangeable implementations of the batched MLP kernels exist:
``uniunc._kernels`` (compiled Cython extension) and ``uniunc._kernels_py``
(NumPy).  The compiled one is preferred when importable; set the environment
variable ``UNIUNC_KERNELS`` to ``python`` or ``c`` to force a choice before
import, or call :func:`set_backend` at runtime (tests and benchmarks do).

Both backends produce the same results up to float rounding; all stochastic
draws happen outside the kernels, so backend choice never changes which
random numbers an experiment consumes.
"""

from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

_IMPLS = {"python": _kernels_py}
if _kernels_c is not None:
    _IMPLS["c"] = _kernels_c


def _initial():
    requested = os.environ.get("UNIUNC_KERNELS", "auto").strip().lower() or "auto"
    if requested == "auto":
        return "c" if _kernels_c is not None else "python"
    if requested not in _IMPLS:
        raise ImportError(
            f"UNIUNC_KERNELS={requested!r} is not available; "
            f"choose from {sorted(_IMPLS) + ['auto']}"
        )
    return requested


_active = _initial()


def available_backends() -> tuple[str, ...]:
    """Names of the importable kernel backends."""
    return tuple(sorted(_IMPLS))


def backend_name() -> str:
    """Name of the backend currently in use (``"c"`` or ``"python"``)."""
    return _active


def set_backend(name: str) -> None:
    """Switch kernel backend; intended for tests and benchmarks."""
    global _active
    if name not in _IMPLS:
        raise ValueError(f"unknown backend {name!r}; available: {sorted(_IMPLS)}")
    _active = name


def forward_batch(layers, xs):
    """Dispatch to the active backend's ``forward_batch``."""
    return _IMPLS[_active].forward_batch(layers, xs)


def jacobian_batch(layers, xs):
    """Dispatch to the active backend's ``jacobian_batch``."""
    return _IMPLS[_active].jacobian_batch(layers, xs)
