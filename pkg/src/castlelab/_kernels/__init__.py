"""Kernel lane selection: compiled extension when available, numpy otherwise.

Set ``CASTLELAB_FORCE_PYTHON=1`` to force the numpy lane (used by the
benchmark and by cross-lane tests).
"""
from __future__ import annotations

import os

from . import _pyfallback

if os.environ.get("CASTLELAB_FORCE_PYTHON"):
    _impl = _pyfallback
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pyfallback

LANE = _impl.LANE

forest_fixed_batch = _impl.forest_fixed_batch
stationary_batch = _impl.stationary_batch
periodic_tau_batch = _impl.periodic_tau_batch
bd_pair_batch = _impl.bd_pair_batch

python_lane = _pyfallback


def native_lane():
    """Return the compiled module or None."""
    try:
        from . import _native
        return _native
    except ImportError:
        return None
