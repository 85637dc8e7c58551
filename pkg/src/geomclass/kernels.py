"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback is used.  Set ``GEOMCLASS_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _purepy

if os.environ.get("GEOMCLASS_PURE_PYTHON", "") not in ("", "0"):
    _impl = _purepy
else:
    try:
        from . import _speedups as _impl
    except ImportError:  # extension not built
        _impl = _purepy

BACKEND = _impl.BACKEND
dp_keep = _impl.dp_keep
gini_best_split = _impl.gini_best_split
smo_solve = _impl.smo_solve


def backends():
    """Return every importable backend module, fallback first."""
    mods = [_purepy]
    try:
        from . import _speedups
        mods.append(_speedups)
    except ImportError:
        pass
    return mods
