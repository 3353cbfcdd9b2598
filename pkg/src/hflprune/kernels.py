"""Backend selection for the hot kernels.

The compiled extension is used when it imports; set ``HFLPRUNE_PURE=1`` to
force the numpy fallback.
"""
from __future__ import annotations

import os

from . import _pure

if os.environ.get("HFLPRUNE_PURE"):
    _impl = _pure
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _pure

BACKEND = "cython" if _impl is not _pure else "python"

masked_average = _impl.masked_average
bandwidth_fractions = _impl.bandwidth_fractions
bandwidth_sum = _impl.bandwidth_sum
bisect_lambda = _impl.bisect_lambda

__all__ = [
    "BACKEND",
    "masked_average",
    "bandwidth_fractions",
    "bandwidth_sum",
    "bisect_lambda",
]
