"""Numerical kernel backend selection.

The compiled Cython extension is preferred; if it is missing (no compiler
at install time) or ``PRICESIM_PURE_PYTHON`` is set, the numpy reference
implementation is used instead.  Both expose the same functions.
"""

import os

from . import _ref

BACKEND = "python"
_impl = _ref

if not os.environ.get("PRICESIM_PURE_PYTHON"):
    try:
        from . import _core as _compiled

        _impl = _compiled
        BACKEND = "compiled"
    except ImportError:
        pass

LINK_LINEAR = _ref.LINK_LINEAR
LINK_LOGISTIC = _ref.LINK_LOGISTIC

min_eig = _impl.min_eig
ball_least_squares = _impl.ball_least_squares
glm_fit = _impl.glm_fit
glm_objective = _impl.glm_objective
glm_gradient = _impl.glm_gradient
price_opt_logistic = _impl.price_opt_logistic
price_opt_misspec = _impl.price_opt_misspec
lloyd = _impl.lloyd
kmeans_run = _impl.kmeans_run


def get_backend(name):
    """Return the kernel module for an explicit backend name."""
    if name == "python":
        return _ref
    if name == "compiled":
        if BACKEND != "compiled":
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
