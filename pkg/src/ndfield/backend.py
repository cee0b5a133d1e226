"""Kernel backend selection: compiled extension vs numpy fallback.

The compiled core (``ndfield._core``, Cython) and the numpy module
(``ndfield._kernels_np``) implement the same four kernels. The compiled one
is preferred when importable; set NDFIELD_BACKEND=numpy (or =compiled) to
force a choice, or call :func:`set_backend` at runtime (used by the
benchmark and the equivalence tests).
"""

import os

from . import _kernels_np

try:
    from . import _core as _compiled
except ImportError:
    _compiled = None

_impl = None
_name = None


def available_backends():
    names = ["numpy"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return names


def set_backend(name):
    """Select the kernel implementation by name ('compiled' or 'numpy')."""
    global _impl, _name
    if name == "numpy":
        _impl = _kernels_np
    elif name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this install")
        _impl = _compiled
    else:
        raise ValueError(f"unknown backend {name!r}")
    _name = name


def current_backend():
    return _name


def hash_encode(tables, resolutions, dense, xs):
    return _impl.hash_encode(tables, resolutions, dense, xs)


def hash_scatter(grad_tables, corners, weights, cot_feats):
    return _impl.hash_scatter(grad_tables, corners, weights, cot_feats)


def warp_views(views, deltas, xs, d):
    return _impl.warp_views(views, deltas, xs, d)


def sample_grad(img, ps):
    return _impl.sample_grad(img, ps)


_requested = os.environ.get("NDFIELD_BACKEND", "auto")
if _requested == "auto":
    set_backend("compiled" if _compiled is not None else "numpy")
else:
    set_backend(_requested)
