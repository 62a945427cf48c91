"""Hot numeric kernels with a compiled core and a numpy fallback.

At import time the compiled Cython extension is preferred; if it is
missing (not built, wrong platform) or ``EXTREMIS_PURE_PYTHON`` is set
to a non-empty value, the numpy implementation is used instead.  Both
expose the same four functions and agree numerically (see the parity
tests).
"""
import importlib
import os

from . import _pure

BACKEND = "pure"
_impl = _pure
if not os.environ.get("EXTREMIS_PURE_PYTHON"):
    try:
        _impl = importlib.import_module("._core", __name__)
        BACKEND = "compiled"
    except ImportError:
        pass

ev_max_scan = _impl.ev_max_scan
gp_grid_scan = _impl.gp_grid_scan
ar1_oscillator = _impl.ar1_oscillator
narx_free_run = _impl.narx_free_run


def get_backend():
    """Name of the kernel backend in use: 'compiled' or 'pure'."""
    return BACKEND
