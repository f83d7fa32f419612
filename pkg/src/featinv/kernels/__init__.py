"""Hot numeric kernels with a switchable backend.

The numba backend (JIT loop nests) is the default; the pure-numpy backend is
the fallback and the reference for cross-checking.  Select with the
``FEATINV_BACKEND`` environment variable (``numba``, ``numpy``, or ``auto``)
or at runtime with :func:`use_backend`.  ``benchmarks/bench_kernels.py``
compares the two.
"""

from __future__ import annotations

import os

from . import numpy_backend

BILINEAR = numpy_backend.BILINEAR
HARD = numpy_backend.HARD
APPROX = numpy_backend.APPROX

BINNING_MODES = {"bilinear": BILINEAR, "hard": HARD, "approx": APPROX}
BINNING_NAMES = {v: k for k, v in BINNING_MODES.items()}

_backend = None
_backend_name = ""


def _load(name: str):
    if name == "numpy":
        return numpy_backend, "numpy"
    if name == "numba":
        from . import numba_backend

        return numba_backend, "numba"
    if name == "auto":
        try:
            from . import numba_backend

            return numba_backend, "numba"
        except ImportError:
            return numpy_backend, "numpy"
    raise ValueError(f"unknown backend {name!r}; expected numba, numpy, or auto")


def use_backend(name: str) -> str:
    """Switch the active kernel backend; returns the resolved name."""
    global _backend, _backend_name
    _backend, _backend_name = _load(name)
    return _backend_name


def active_backend() -> str:
    return _backend_name


def get_backend(name: str | None = None):
    """Return a backend module without changing the active one."""
    if name is None:
        return _backend
    return _load(name)[0]


use_backend(os.environ.get("FEATINV_BACKEND", "auto").lower())


def conv2d_forward(x, w, bias, pad, stride):
    return _backend.conv2d_forward(x, w, bias, pad, stride)


def conv2d_input_grad(gout, w, pad, stride, in_h, in_w):
    return _backend.conv2d_input_grad(gout, w, pad, stride, in_h, in_w)


def maxpool_forward(x, window, stride, pad):
    return _backend.maxpool_forward(x, window, stride, pad)


def maxpool_backward(gout, argmax, in_h, in_w):
    return _backend.maxpool_backward(gout, argmax, in_h, in_w)


def binning_forward(g, k, mode):
    return _backend.binning_forward(g, k, mode)


def binning_backward(g, gout, k, mode):
    return _backend.binning_backward(g, gout, k, mode)
