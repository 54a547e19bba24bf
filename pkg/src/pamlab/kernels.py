"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
fallback.  Setting PAMLAB_NO_EXT=1 forces the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if not os.environ.get("PAMLAB_NO_EXT"):
    try:
        from . import _kernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback


def backend():
    return BACKEND


def heat_step(u, xi, lam, theta, var, coupling=0):
    return _impl.heat_step(u, xi, float(lam), float(theta), float(var), int(coupling))


def pair_double_time(X, W, evaluator):
    return _impl.pair_double_time(X, W, *evaluator.args())


def pair_equal_time(X, w, evaluator):
    return _impl.pair_equal_time(X, w, *evaluator.args())
