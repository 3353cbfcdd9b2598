"""Pruning-ratio and bandwidth allocation for one edge round.

Each device is reduced to five numbers:

* ``v1`` -- latency budget left after conv computation, ``T_th - T_cmp_conv``
* ``v2`` -- conv upload size in bits, ``q * W_conv``
* ``v3`` -- fully-connected computation time, ``T_cmp_fully``
* ``v4`` -- fully-connected upload size in bits, ``q * W_fully``
* ``snr`` -- rate with the whole band, ``B log2(1 + g p / sigma^2)``

With rate ``r = b * snr`` the smallest pruning ratio that meets the latency
threshold is ``1 - (r v1 - v2) / (r v3 + v4)``.  Summing that bound over
devices gives a convex objective in ``b``; its KKT point has a closed form
per device given the multiplier on ``sum(b) <= 1``, and the multiplier is
found by bisection.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .model import ModelArch
from .wireless import ChannelState, DeviceProfile, compute_latency, full_band_rate


log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class AllocationInputs:
    v1: np.ndarray
    v2: np.ndarray
    v3: np.ndarray
    v4: np.ndarray
    snr: np.ndarray
    threshold: float

    def __post_init__(self):
        arrays = [np.atleast_1d(np.asarray(getattr(self, k), dtype=np.float64)) for k in ("v1", "v2", "v3", "v4", "snr")]
        n = arrays[0].shape[0]
        if n < 1 or any(a.shape != (n,) for a in arrays):
            raise ValueError("allocation inputs must be equal-length 1-D vectors with at least one device")
        v1, v2, v3, v4, snr = arrays
        if np.any(v2 <= 0) or np.any(v3 <= 0) or np.any(v4 <= 0) or np.any(snr <= 0):
            raise ValueError("v2, v3, v4 and snr must be positive")
        if not np.all(np.isfinite(v1)):
            raise ValueError("v1 must be finite")
        for k, a in zip(("v1", "v2", "v3", "v4", "snr"), arrays):
            a.flags.writeable = False
            object.__setattr__(self, k, a)

    @property
    def n(self) -> int:
        return self.v1.shape[0]

    @property
    def coef(self) -> np.ndarray:
        return self.v1 * self.v4 + self.v2 * self.v3

    @classmethod
    def from_devices(
        cls,
        profiles: Sequence[DeviceProfile],
        channels: Sequence[ChannelState],
        arch: ModelArch,
        iterations: Sequence[int] | int,
        threshold: float,
    ) -> "AllocationInputs":
        if isinstance(iterations, (int, np.integer)):
            iterations = [int(iterations)] * len(profiles)
        v1, v2, v3, v4, snr = [], [], [], [], []
        for p, ch, t in zip(profiles, channels, iterations, strict=True):
            q = ch.quantization_bits
            v1.append(threshold - compute_latency(t, p.cycles_per_weight, arch.conv_weight_count, p.cpu_freq))
            v2.append(q * arch.conv_weight_count)
            v3.append(compute_latency(t, p.cycles_per_weight, arch.fc_weight_count, p.cpu_freq))
            v4.append(q * arch.fc_weight_count)
            snr.append(full_band_rate(ch, p.tx_power))
        return cls(np.array(v1), np.array(v2), np.array(v3), np.array(v4), np.array(snr), threshold)

    def subset(self, idx) -> "AllocationInputs":
        return AllocationInputs(self.v1[idx], self.v2[idx], self.v3[idx], self.v4[idx], self.snr[idx], self.threshold)


@dataclass(frozen=True, eq=False)
class AllocationPlan:
    bandwidth: np.ndarray
    ratios: np.ndarray
    lam: float
    stragglers: frozenset[int]
    raw_ratios: np.ndarray = field(repr=False)
    scheme: str = "optimal"

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "lambda": self.lam,
            "bandwidth": self.bandwidth.tolist(),
            "ratios": self.ratios.tolist(),
            "raw_ratios": self.raw_ratios.tolist(),
            "stragglers": sorted(self.stragglers),
        }


def pruning_bound(v1, v2, v3, v4, rate):
    """Unclamped lower bound on the pruning ratio at uplink ``rate``."""
    return 1.0 - (rate * v1 - v2) / (rate * v3 + v4)


def min_pruning_ratio(inputs: AllocationInputs, b) -> np.ndarray:
    """Smallest admissible pruning ratio per device, floored at zero.

    Values above one mean the device misses the threshold even with the
    whole head pruned.  ``b = 0`` gives ``1 + v2 / v4`` rather than failing.
    """
    b = np.broadcast_to(np.asarray(b, dtype=np.float64), inputs.v1.shape)
    if np.any(b < 0) or np.any(b > 1):
        raise ValueError("bandwidth fractions must lie in [0, 1]")
    raw = pruning_bound(inputs.v1, inputs.v2, inputs.v3, inputs.v4, b * inputs.snr)
    return np.maximum(raw, 0.0)


def bandwidth_given_lambda(inputs: AllocationInputs, lam: float) -> np.ndarray:
    """Stationary bandwidth per device for multiplier ``lam``, clamped to [0, 1].

    Devices whose objective term does not decrease with bandwidth
    (``v1 v4 + v2 v3 <= 0``) get nothing.
    """
    if not lam > 0:
        raise ValueError(f"multiplier must be positive, got {lam}")
    return kernels.bandwidth_fractions(inputs.coef, inputs.snr, inputs.v3, inputs.v4, float(lam))


def objective_terms(inputs: AllocationInputs, b) -> np.ndarray:
    b = np.broadcast_to(np.asarray(b, dtype=np.float64), inputs.v1.shape)
    return pruning_bound(inputs.v1, inputs.v2, inputs.v3, inputs.v4, b * inputs.snr)


def objective(inputs: AllocationInputs, b) -> float:
    """Sum of unclamped pruning bounds; the allocation minimizes this."""
    return float(np.sum(objective_terms(inputs, b)))


def objective_gradient(inputs: AllocationInputs, b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    return -inputs.coef * inputs.snr / (inputs.v3 * inputs.snr * b + inputs.v4) ** 2


def objective_curvature(x, v1, v2, v3, v4):
    """Second derivative of ``1 - (x v1 - v2) / (x v3 + v4)`` in ``x``."""
    d = v3 * x + v4
    return 2.0 * v3 * (v1 * v4 + v2 * v3) * d / d**4


def stationarity_residual(inputs: AllocationInputs, b, lam: float) -> np.ndarray:
    """Derivative of the Lagrangian in each ``b_n``; zero at interior optima."""
    return lam + objective_gradient(inputs, b)


def _finish(inputs: AllocationInputs, b: np.ndarray, lam: float, scheme: str) -> AllocationPlan:
    raw = min_pruning_ratio(inputs, b)
    stragglers = frozenset(int(i) for i in np.flatnonzero(raw > 1.0))
    ratios = np.minimum(raw, 1.0)
    for arr in (b, ratios, raw):
        arr.flags.writeable = False
    return AllocationPlan(b, ratios, float(lam), stragglers, raw, scheme)


def solve_allocation(inputs: AllocationInputs, tol: float = 1e-9, max_iter: int = 200) -> AllocationPlan:
    """Optimal bandwidth split and the pruning ratios it implies.

    Stragglers (bound above one even at their allocated bandwidth) are
    reported with ratio 1, i.e. they upload the unprunable segment only.
    """
    coef = inputs.coef
    lam, iters, converged = kernels.bisect_lambda(coef, inputs.snr, inputs.v3, inputs.v4, tol, max_iter)
    if not converged:
        log.warning("multiplier search stopped after %d iterations without reaching tolerance %g", iters, tol)
    if lam == 0.0:
        # at most one device benefits from bandwidth; the simplex is slack
        b = np.where(coef > 0, 1.0, 0.0)
        if not b.any():
            b = np.full(inputs.n, 1.0 / inputs.n)
    else:
        b = np.array(kernels.bandwidth_fractions(coef, inputs.snr, inputs.v3, inputs.v4, lam))
    return _finish(inputs, b, lam, "optimal")


def baseline_equal(inputs: AllocationInputs) -> AllocationPlan:
    """Equal bandwidth, pruning ratio still set to the latency bound."""
    return _finish(inputs, np.full(inputs.n, 1.0 / inputs.n), 0.0, "equal")


def baseline_no_pruning(inputs: AllocationInputs) -> AllocationPlan:
    """Equal bandwidth and no pruning; the threshold may be violated."""
    b = np.full(inputs.n, 1.0 / inputs.n)
    raw = min_pruning_ratio(inputs, b)
    ratios = np.zeros(inputs.n)
    for arr in (b, ratios, raw):
        arr.flags.writeable = False
    return AllocationPlan(b, ratios, 0.0, frozenset(), raw, "no_pruning")


def fixed_ratio_plan(inputs: AllocationInputs, ratio: float) -> AllocationPlan:
    """Equal bandwidth with one prescribed pruning ratio for every device."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must lie in [0, 1], got {ratio}")
    b = np.full(inputs.n, 1.0 / inputs.n)
    raw = min_pruning_ratio(inputs, b)
    ratios = np.full(inputs.n, float(ratio))
    for arr in (b, ratios, raw):
        arr.flags.writeable = False
    return AllocationPlan(b, ratios, 0.0, frozenset(), raw, "fixed")


def allocate(inputs: AllocationInputs, scheme: str, ratio: float | None = None) -> AllocationPlan:
    if scheme == "optimal":
        return solve_allocation(inputs)
    if scheme == "equal":
        return baseline_equal(inputs)
    if scheme == "no_pruning":
        return baseline_no_pruning(inputs)
    if scheme == "fixed":
        if ratio is None:
            raise ValueError("scheme 'fixed' needs a ratio")
        return fixed_ratio_plan(inputs, ratio)
    raise ValueError(f"unknown scheme {scheme!r}")


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum(x) = 1}`` (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.shape[0] + 1)
    cond = u - css / ind > 0
    k = ind[cond][-1]
    theta = css[cond][-1] / k
    return np.maximum(v - theta, 0.0)


def oracle_allocation(
    inputs: AllocationInputs,
    max_iter: int = 200_000,
    tol: float = 1e-14,
    decay: float = 1e5,
) -> AllocationPlan:
    """Reference optimum by projected gradient descent on the simplex.

    Step ``k`` is ``1 / (L (1 + k / decay))`` with ``L`` the largest
    curvature of any objective term on ``[0, 1]``.  Slow; meant for
    cross-checking :func:`solve_allocation` on small instances.
    """
    if inputs.n > 8:
        raise ValueError("oracle_allocation is meant for at most 8 devices")
    coef = inputs.coef
    curv = 2.0 * np.maximum(coef, 0.0) * inputs.snr**2 * inputs.v3 / inputs.v4**3
    lipschitz = float(curv.max()) if curv.max() > 0 else 1.0
    b = np.full(inputs.n, 1.0 / inputs.n)
    moved = np.inf
    for k in range(max_iter):
        step = 1.0 / (lipschitz * (1.0 + k / decay))
        nb = project_simplex(b - step * objective_gradient(inputs, b))
        moved = float(np.max(np.abs(nb - b)))
        b = nb
        if moved < tol:
            break
    else:
        raise ConvergenceError(
            f"projected gradient did not settle within {max_iter} iterations (last move {moved:.3e})"
        )
    interior = (b > 1e-12) & (b < 1 - 1e-12)
    lam = float(np.mean(-objective_gradient(inputs, b)[interior])) if interior.any() else 0.0
    return _finish(inputs, b, lam, "oracle")
