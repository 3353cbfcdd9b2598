"""Weight storage, importance scores, and pruning masks.

A model is a flat float64 vector split into an unprunable leading segment
(the "conv" part, which also carries every bias) and a prunable trailing
segment holding the fully-connected weight matrices.  Pruning only ever
touches the trailing segment.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ArchMismatchError(ValueError):
    """Two objects that must share an architecture do not."""


@dataclass(frozen=True)
class ModelArch:
    conv_weight_count: int
    fc_layers: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.conv_weight_count < 0:
            raise ValueError("conv_weight_count must be nonnegative")
        layers = tuple((int(a), int(b)) for a, b in self.fc_layers)
        if any(a < 1 or b < 1 for a, b in layers):
            raise ValueError(f"fully-connected widths must be >= 1, got {layers}")
        object.__setattr__(self, "fc_layers", layers)

    @property
    def fc_weight_count(self) -> int:
        return sum(a * b for a, b in self.fc_layers)

    @property
    def total(self) -> int:
        return self.conv_weight_count + self.fc_weight_count

    @property
    def fc_slice(self) -> slice:
        return slice(self.conv_weight_count, self.total)


@dataclass(frozen=True, eq=False)
class ModelWeights:
    values: np.ndarray
    arch: ModelArch

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if values.shape[0] != self.arch.total:
            raise ArchMismatchError(
                f"expected {self.arch.total} weights for {self.arch}, got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise FloatingPointError("model weights contain non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def fc(self) -> np.ndarray:
        return self.values[self.arch.fc_slice]

    @property
    def conv(self) -> np.ndarray:
        return self.values[: self.arch.conv_weight_count]

    def with_values(self, values: np.ndarray) -> "ModelWeights":
        return ModelWeights(values, self.arch)


@dataclass(frozen=True, eq=False)
class PruningMask:
    bits: np.ndarray
    ratio: float
    arch: ModelArch = field(repr=False)

    def __post_init__(self):
        bits = np.array(self.bits, dtype=np.uint8, copy=True).reshape(-1)
        if bits.shape[0] != self.arch.total:
            raise ArchMismatchError(f"mask length {bits.shape[0]} != {self.arch.total}")
        if np.any(bits > 1):
            raise ValueError("mask bits must be 0 or 1")
        if not np.all(bits[: self.arch.conv_weight_count] == 1):
            raise ValueError("the unprunable segment of a mask must be all ones")
        _check_ratio(self.ratio)
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "ratio", float(self.ratio))

    @classmethod
    def ones(cls, arch: ModelArch) -> "PruningMask":
        return cls(np.ones(arch.total, dtype=np.uint8), 0.0, arch)

    @property
    def pruned_count(self) -> int:
        return int(self.arch.fc_weight_count - self.bits[self.arch.fc_slice].sum())

    @property
    def kept_count(self) -> int:
        return int(self.bits.sum())


def _check_ratio(ratio: float) -> None:
    if not (0.0 <= ratio <= 1.0) or math.isnan(ratio):
        raise ValueError(f"pruning ratio must lie in [0, 1], got {ratio}")


def pruned_weight_count(arch: ModelArch, ratio: float) -> float:
    """Number of weights a device keeps at pruning ratio ``ratio`` (real-valued)."""
    _check_ratio(ratio)
    return arch.conv_weight_count + (1.0 - ratio) * arch.fc_weight_count


def pruned_fc_count(arch: ModelArch, ratio: float) -> int:
    """Integer number of fully-connected weights removed at ``ratio``."""
    _check_ratio(ratio)
    # guard against 0.29 * 100 == 28.999999999999996
    return min(arch.fc_weight_count, int(math.floor(ratio * arch.fc_weight_count + 1e-9)))


def realized_weight_count(arch: ModelArch, ratio: float) -> int:
    """Integer counterpart of :func:`pruned_weight_count`; never below it."""
    return arch.total - pruned_fc_count(arch, ratio)


def importance(before: ModelWeights, after: ModelWeights) -> np.ndarray:
    """Absolute weight change over the fully-connected segment."""
    if before.arch != after.arch:
        raise ArchMismatchError("importance needs two weight vectors of one architecture")
    return np.abs(before.fc - after.fc)


def magnitude_scores(w: ModelWeights) -> np.ndarray:
    """Fallback score for a device with no previous update: ``|w_j|``."""
    return np.abs(w.fc)


def build_mask(scores: np.ndarray, ratio: float, arch: ModelArch) -> PruningMask:
    """Zero the ``floor(ratio * W_fully)`` lowest-scoring fully-connected weights.

    Ties go to the lower index first, so the mask is a deterministic function
    of ``scores`` and ``ratio``.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.shape[0] != arch.fc_weight_count:
        raise ArchMismatchError(
            f"expected {arch.fc_weight_count} scores, got {scores.shape[0]}"
        )
    if np.any(scores < 0) or not np.all(np.isfinite(scores)):
        raise ValueError("importance scores must be finite and nonnegative")
    k = pruned_fc_count(arch, ratio)
    bits = np.ones(arch.total, dtype=np.uint8)
    if k:
        order = np.argsort(scores, kind="stable")
        bits[arch.conv_weight_count + order[:k]] = 0
    return PruningMask(bits, ratio, arch)


def apply_mask(w: ModelWeights, m: PruningMask) -> ModelWeights:
    if w.values.shape != m.bits.shape:
        raise ArchMismatchError(
            f"weights ({w.values.shape[0]}) and mask ({m.bits.shape[0]}) differ in length"
        )
    return w.with_values(np.where(m.bits.astype(bool), w.values, 0.0))
