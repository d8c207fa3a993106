"""Backend selection for the hot loops.

The compiled extension is used when it imports; setting
``ENERGYSHIELD_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _fallback

if os.environ.get("ENERGYSHIELD_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _fallback

BACKEND = "python" if _impl is _fallback else "cython"

IDLE, NAIVE, POL, EXPO, MON_LOW, MON_HIGH, MON_CENTRAL = range(7)
MODE_ENERGY, MODE_ADAPTIVE, MODE_NAIVE = range(3)

zeta_array = _impl.zeta_array
calibrated_pivot = _impl.calibrated_pivot
dp_single = _impl.dp_single
run_single = _impl.run_single
run_two_group = _impl.run_two_group


def backend(name: str):
    """Return the kernel module for ``name`` ('cython' or 'python')."""
    if name == "python":
        return _fallback
    from . import _kernels

    return _kernels
