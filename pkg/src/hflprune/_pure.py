"""Numpy implementations of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature.
Aggregation accumulates rows in the same order in both backends, so the
results agree bit for bit; the multiplier search agrees to rounding.
"""
from __future__ import annotations

import math

import numpy as np


def masked_average(stack: np.ndarray, masks: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """Per-position mean over the rows whose mask bit is set.

    Positions no row keeps fall back to ``previous``.
    """
    stack = np.ascontiguousarray(stack, dtype=np.float64)
    keep = np.ascontiguousarray(masks, dtype=np.uint8).astype(bool)
    total = np.where(keep, stack, 0.0).sum(axis=0)
    count = keep.sum(axis=0)
    out = np.array(previous, dtype=np.float64, copy=True)
    live = count > 0
    out[live] = total[live] / count[live]
    return out


def bandwidth_fractions(coef, snr, v3, v4, lam: float) -> np.ndarray:
    """Clamped stationary bandwidth for every device at multiplier ``lam``."""
    coef = np.asarray(coef, dtype=np.float64)
    snr = np.asarray(snr, dtype=np.float64)
    v3 = np.asarray(v3, dtype=np.float64)
    v4 = np.asarray(v4, dtype=np.float64)
    out = np.zeros(coef.shape, dtype=np.float64)
    ok = coef > 0.0
    with np.errstate(over="ignore"):
        # a tiny multiplier overflows to inf, which the clip maps to 1
        root = np.sqrt(coef[ok] * snr[ok] / lam)
    out[ok] = np.clip((root - v4[ok]) / (v3[ok] * snr[ok]), 0.0, 1.0)
    return out


def bandwidth_sum(coef, snr, v3, v4, lam: float) -> float:
    return float(bandwidth_fractions(coef, snr, v3, v4, lam).sum())


def bisect_lambda(coef, snr, v3, v4, tol: float = 1e-9, max_iter: int = 200):
    """Find the multiplier whose clamped bandwidths sum to one.

    Returns ``(lam, iterations, converged)``.  ``lam == 0`` means the simplex
    constraint is slack: at most one device can use bandwidth at all.
    """
    if np.count_nonzero(np.asarray(coef) > 0.0) <= 1:
        return 0.0, 0, True

    lo = hi = 1.0
    if bandwidth_sum(coef, snr, v3, v4, 1.0) >= 1.0:
        for _ in range(2100):
            hi *= 4.0
            if bandwidth_sum(coef, snr, v3, v4, hi) < 1.0:
                break
        lo = hi / 4.0
    else:
        for _ in range(2100):
            lo /= 4.0
            if bandwidth_sum(coef, snr, v3, v4, lo) >= 1.0:
                break
        hi = lo * 4.0

    mid = math.sqrt(lo * hi)
    for it in range(1, max_iter + 1):
        mid = math.sqrt(lo * hi)
        s = bandwidth_sum(coef, snr, v3, v4, mid)
        if abs(s - 1.0) < tol:
            return mid, it, True
        if s > 1.0:
            lo = mid
        else:
            hi = mid
    return mid, max_iter, False
