"""Uplink rate and the per-device computation/communication latency model.

All quantities are SI: watts, hertz, seconds, bits.  dBm only appears at
the configuration boundary and goes through :func:`dbm_to_watts`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ModelArch, _check_ratio


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class DeviceProfile:
    cpu_freq: float
    cycles_per_weight: float
    tx_power: float
    f_min: float | None = None
    f_max: float | None = None

    def __post_init__(self):
        lo = self.cpu_freq if self.f_min is None else self.f_min
        hi = self.cpu_freq if self.f_max is None else self.f_max
        object.__setattr__(self, "f_min", lo)
        object.__setattr__(self, "f_max", hi)
        if min(self.cpu_freq, self.cycles_per_weight, self.tx_power, lo, hi) <= 0:
            raise ValueError(f"device profile values must be positive: {self}")
        if not lo <= self.cpu_freq <= hi:
            raise ValueError(f"cpu_freq {self.cpu_freq} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class ChannelState:
    gain: float
    noise_power: float
    total_bandwidth: float
    quantization_bits: int

    def __post_init__(self):
        if self.gain <= 0 or self.noise_power <= 0 or self.total_bandwidth <= 0:
            raise ValueError(f"gain, noise and bandwidth must be positive: {self}")
        if self.quantization_bits < 1:
            raise ValueError("quantization_bits must be >= 1")


@dataclass(frozen=True)
class LatencyBreakdown:
    cmp_conv: float
    com_conv: float
    cmp_fully: float
    com_fully: float
    ratio: float
    total: float


def full_band_rate(ch: ChannelState, tx_power: float) -> float:
    """Rate in bits/s with the whole band: ``B * log2(1 + g p / sigma^2)``."""
    return ch.total_bandwidth * math.log2(1.0 + ch.gain * tx_power / ch.noise_power)


def uplink_rate(b: float, ch: ChannelState, tx_power: float) -> float:
    if not 0.0 <= b <= 1.0:
        raise ValueError(f"bandwidth fraction must lie in [0, 1], got {b}")
    return b * full_band_rate(ch, tx_power)


def compute_latency(iterations: float, cycles_per_weight: float, weights: float, cpu_freq: float) -> float:
    if cpu_freq <= 0:
        raise ValueError(f"cpu frequency must be positive, got {cpu_freq}")
    return iterations * cycles_per_weight * weights / cpu_freq


def uplink_latency(bits_per_weight: float, weights: float, rate: float) -> float:
    """Seconds to upload ``weights``; ``inf`` when the device has no rate."""
    if weights == 0:
        return 0.0
    if rate <= 0:
        return math.inf
    return bits_per_weight * weights / rate


def device_latency(
    profile: DeviceProfile,
    ch: ChannelState,
    b: float,
    arch: ModelArch,
    ratio: float,
    iterations: int,
) -> LatencyBreakdown:
    """Split latency into conv/fully and computation/upload parts."""
    _check_ratio(ratio)
    rate = uplink_rate(b, ch, profile.tx_power)
    q = ch.quantization_bits
    f, c = profile.cpu_freq, profile.cycles_per_weight
    cmp_conv = compute_latency(iterations, c, arch.conv_weight_count, f)
    com_conv = uplink_latency(q, arch.conv_weight_count, rate)
    cmp_fully = compute_latency(iterations, c, arch.fc_weight_count, f)
    com_fully = uplink_latency(q, arch.fc_weight_count, rate)
    # (1 - 1) * inf would be nan; a fully pruned head costs nothing
    fully = 0.0 if ratio == 1.0 else (1.0 - ratio) * (cmp_fully + com_fully)
    return LatencyBreakdown(cmp_conv, com_conv, cmp_fully, com_fully, ratio, cmp_conv + com_conv + fully)


def direct_latency(
    profile: DeviceProfile,
    ch: ChannelState,
    b: float,
    weights: float,
    iterations: int,
) -> float:
    """Computation plus upload latency for a model of ``weights`` weights."""
    rate = uplink_rate(b, ch, profile.tx_power)
    return compute_latency(iterations, profile.cycles_per_weight, weights, profile.cpu_freq) + uplink_latency(
        ch.quantization_bits, weights, rate
    )


def edge_round_latency(totals: Sequence[float]) -> float:
    """An edge round lasts as long as its slowest device."""
    if len(totals) == 0:
        raise ValueError("edge round latency needs at least one device")
    return max(totals)


@dataclass(frozen=True)
class ChannelModel:
    """``static`` returns ``gain`` every draw; ``rayleigh`` returns
    ``pathloss * |h|^2`` with ``h`` a unit-power complex normal."""

    kind: str = "rayleigh"
    gain: float = 1.0
    pathloss: float = 1.0

    def __post_init__(self):
        if self.kind not in ("static", "rayleigh"):
            raise ValueError(f"unknown channel model {self.kind!r}")
        if self.gain <= 0 or self.pathloss <= 0:
            raise ValueError("channel gain and pathloss must be positive")

    def sample(self, rng: np.random.Generator, size: int | None = None):
        if self.kind == "static":
            return self.gain if size is None else np.full(size, self.gain)
        re = rng.standard_normal(size)
        im = rng.standard_normal(size)
        return self.pathloss * (re * re + im * im) / 2.0


def sample_channel(rng: np.random.Generator, model: ChannelModel) -> float:
    return float(model.sample(rng))
