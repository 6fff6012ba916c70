"""Kernel backend selection.

The compiled extension is used when importable; setting the environment
variable ``DCDGD_PURE_PYTHON=1`` before import forces the Python kernels.
"""
import os

from . import _kernels_py

if os.environ.get("DCDGD_PURE_PYTHON", "") not in ("", "0"):
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels
    except ImportError:
        kernels = _kernels_py

BACKEND = kernels.NAME


def available_backends():
    """Return every importable kernel module, Python first."""
    mods = [_kernels_py]
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        mods.append(_kernels)
    return mods
