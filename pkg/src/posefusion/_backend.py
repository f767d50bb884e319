"""Kernel selection: the compiled extension when importable, else numpy.

Set ``POSEFUSION_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernel

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

BACKENDS = ("cython", "python")


def available() -> list[str]:
    return [b for b in BACKENDS if b == "python" or _ckernel is not None]


def default_backend() -> str:
    forced = os.environ.get("POSEFUSION_BACKEND", "").strip().lower()
    if forced:
        if forced not in BACKENDS:
            raise ValueError(f"POSEFUSION_BACKEND must be one of {BACKENDS}, got {forced!r}")
        if forced == "cython" and _ckernel is None:
            raise ImportError("POSEFUSION_BACKEND=cython but the compiled kernel is not built")
        return forced
    return "cython" if _ckernel is not None else "python"


BACKEND = default_backend()


def render_kernel(pack, cam, rows, cols, spp, max_depth, seed, want_grad=False, want_points=False,
                  threads=None, backend=None):
    name = backend or BACKEND
    if name == "cython":
        if _ckernel is None:
            raise ImportError("compiled kernel is not available")
        return _ckernel.render_kernel(pack, cam, rows, cols, spp, max_depth, seed,
                                      want_grad, want_points, int(threads or 0))
    if name == "python":
        return _pykernel.render_kernel(pack, cam, rows, cols, spp, max_depth, seed, want_grad, want_points)
    raise ValueError(f"unknown backend {name!r}")
