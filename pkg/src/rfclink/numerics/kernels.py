"""Kernel selection: compiled extension when importable, numpy otherwise.

Set ``RFCLINK_PURE_PYTHON=1`` to force the numpy path.
"""

import os

from . import _kernels_py

if os.environ.get("RFCLINK_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def gru_forward(a, u):
    return _impl.gru_forward(a, u)


def gru_backward(a, u, states, gates, g):
    return _impl.gru_backward(a, u, states, gates, g)


def adam_update(p, g, m, v, lr, b1, b2, eps, c1, c2):
    """Fused in-place Adam step on flat contiguous arrays of one dtype."""
    return _impl.adam_update(p, g, m, v, lr, b1, b2, eps, c1, c2)
