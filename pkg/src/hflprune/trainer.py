"""Local datasets, a small feed-forward network, and masked minibatch SGD."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .model import ArchMismatchError, ModelArch, ModelWeights, PruningMask, apply_mask


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if x.ndim != 2:
            raise ValueError(f"features must be a 2-D array, got shape {x.shape}")
        if x.shape[0] == 0:
            raise ValueError("a dataset needs at least one sample")
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.num_classes)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int
    local_iterations: int | None = None
    local_epochs: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.local_iterations is not None and self.local_iterations < 1:
            raise ValueError("local_iterations must be >= 1")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")

    def iterations_for(self, size: int) -> int:
        """Number of SGD steps T; epochs times batches per epoch unless fixed."""
        if self.local_iterations is not None:
            return self.local_iterations
        return self.local_epochs * math.ceil(size / self.batch_size)


_ACTIVATIONS = {"tanh", "relu"}
_LOSSES = {"cross_entropy", "mse"}


@dataclass(frozen=True)
class Network:
    """Feed-forward classifier with an unprunable feature extractor.

    ``feature_widths`` are the hidden widths of the extractor; its weights and
    biases, plus the biases of the head, make up the unprunable segment.
    ``fc_widths`` lists the head's output widths, the last one being the
    number of classes.  Layer weights are stored row-major as ``(in, out)``.
    """

    input_dim: int
    feature_widths: tuple[int, ...]
    fc_widths: tuple[int, ...]
    activation: str = "tanh"
    loss: str = "cross_entropy"

    def __post_init__(self):
        object.__setattr__(self, "feature_widths", tuple(int(v) for v in self.feature_widths))
        object.__setattr__(self, "fc_widths", tuple(int(v) for v in self.fc_widths))
        if self.input_dim < 1 or not self.fc_widths:
            raise ValueError("network needs an input and at least one head layer")
        if any(v < 1 for v in self.feature_widths + self.fc_widths):
            raise ValueError("layer widths must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(_ACTIVATIONS)}")
        if self.loss not in _LOSSES:
            raise ValueError(f"loss must be one of {sorted(_LOSSES)}")

    @property
    def num_classes(self) -> int:
        return self.fc_widths[-1]

    @property
    def feature_layers(self) -> list[tuple[int, int]]:
        dims = (self.input_dim,) + self.feature_widths
        return list(zip(dims[:-1], dims[1:]))

    @property
    def head_layers(self) -> list[tuple[int, int]]:
        first = self.feature_widths[-1] if self.feature_widths else self.input_dim
        dims = (first,) + self.fc_widths
        return list(zip(dims[:-1], dims[1:]))

    @property
    def arch(self) -> ModelArch:
        conv = sum(a * b + b for a, b in self.feature_layers)
        conv += sum(b for _, b in self.head_layers)
        return ModelArch(conv, tuple(self.head_layers))

    def init_weights(self, seed: int) -> ModelWeights:
        """Uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` for every parameter."""
        rng = np.random.default_rng(seed)
        values = np.empty(self.arch.total)
        for (fan_in, _), (w, b) in zip(self._all_layers(), self._slices()):
            bound = 1.0 / math.sqrt(fan_in)
            values[w] = rng.uniform(-bound, bound, size=w.stop - w.start)
            values[b] = rng.uniform(-bound, bound, size=b.stop - b.start)
        return ModelWeights(values, self.arch)

    def _all_layers(self) -> list[tuple[int, int]]:
        return self.feature_layers + self.head_layers

    def _slices(self) -> list[tuple[slice, slice]]:
        """(weight slice, bias slice) per layer in forward order."""
        out = []
        pos = 0
        for a, b in self.feature_layers:
            out.append((slice(pos, pos + a * b), slice(pos + a * b, pos + a * b + b)))
            pos += a * b + b
        bias_pos = pos
        weight_pos = self.arch.conv_weight_count
        for a, b in self.head_layers:
            out.append((slice(weight_pos, weight_pos + a * b), slice(bias_pos, bias_pos + b)))
            weight_pos += a * b
            bias_pos += b
        return out

    def _unpack(self, values: np.ndarray):
        return [
            (values[w].reshape(a, b), values[bs])
            for (a, b), (w, bs) in zip(self._all_layers(), self._slices())
        ]

    def _act(self, z):
        return np.tanh(z) if self.activation == "tanh" else np.maximum(z, 0.0)

    def _act_grad(self, z, h):
        return 1.0 - h * h if self.activation == "tanh" else (z > 0).astype(np.float64)

    def logits(self, w: ModelWeights, x: np.ndarray) -> np.ndarray:
        self._check(w)
        h = np.asarray(x, dtype=np.float64)
        layers = self._unpack(w.values)
        for i, (wm, b) in enumerate(layers):
            z = h @ wm + b
            h = z if i == len(layers) - 1 else self._act(z)
        return h

    def loss_and_grad(self, w: ModelWeights, x: np.ndarray, y: np.ndarray):
        """Mean loss over ``(x, y)`` and its gradient as a flat vector."""
        self._check(w)
        return self._loss_and_grad(w.values, x, y)

    def _loss_and_grad(self, values: np.ndarray, x: np.ndarray, y: np.ndarray):
        layers = self._unpack(values)
        hs = [np.asarray(x, dtype=np.float64)]
        zs = []
        for i, (wm, b) in enumerate(layers):
            z = hs[-1] @ wm + b
            zs.append(z)
            hs.append(z if i == len(layers) - 1 else self._act(z))
        loss, delta = _loss_and_delta(self.loss, hs[-1], y, self.num_classes)

        grad = np.empty(self.arch.total)
        slices = self._slices()
        for i in range(len(layers) - 1, -1, -1):
            ws, bs = slices[i]
            grad[ws] = (hs[i].T @ delta).reshape(-1)
            grad[bs] = delta.sum(axis=0)
            if i:
                delta = (delta @ layers[i][0].T) * self._act_grad(zs[i - 1], hs[i])
        return loss, grad

    def _check(self, w: ModelWeights) -> None:
        if w.arch != self.arch:
            raise ArchMismatchError(f"weights built for {w.arch}, network expects {self.arch}")


def _loss_and_delta(kind: str, logits: np.ndarray, y: np.ndarray, classes: int):
    n = logits.shape[0]
    onehot = np.zeros_like(logits)
    onehot[np.arange(n), y] = 1.0
    if kind == "mse":
        diff = logits - onehot
        return float(np.mean(np.sum(diff * diff, axis=1))), 2.0 * diff / n
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -float(np.mean(logp[np.arange(n), y]))
    return loss, (np.exp(logp) - onehot) / n


def local_loss(net: Network, w: ModelWeights, data: Dataset) -> float:
    loss, _ = net.loss_and_grad(w, data.x, data.y)
    return loss


def sgd_step(net: Network, w: ModelWeights, m: PruningMask, batch: Dataset, eta: float) -> ModelWeights:
    """One masked SGD step: ``w - eta * grad * m``."""
    _, grad = net.loss_and_grad(w, batch.x, batch.y)
    return w.with_values(_masked_update(w.values, grad, m.bits.astype(bool), eta))


def _masked_update(values, grad, keep, eta):
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad))
        raise FloatingPointError(
            f"non-finite gradient at {bad.size} positions (first index {bad[0]})"
        )
    return values - eta * np.where(keep, grad, 0.0)


def batches(size: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Endless stream of index batches; each epoch is a fresh permutation."""
    while True:
        order = rng.permutation(size)
        for start in range(0, size, batch_size):
            yield order[start : start + batch_size]


def local_update(net: Network, w0: ModelWeights, m: PruningMask, data: Dataset, cfg: TrainConfig) -> ModelWeights:
    """Mask the received model, then run T masked SGD steps on local data."""
    w = apply_mask(w0, m)
    net._check(w)
    keep = m.bits.astype(bool)
    rng = np.random.default_rng(cfg.rng_seed)
    stream = batches(len(data), cfg.batch_size, rng)
    values = np.array(w.values)
    for _ in range(cfg.iterations_for(len(data))):
        idx = next(stream)
        _, grad = net._loss_and_grad(values, data.x[idx], data.y[idx])
        values = _masked_update(values, grad, keep, cfg.learning_rate)
    return w.with_values(values)


def evaluate(net: Network, w: ModelWeights, test: Dataset) -> tuple[float, float]:
    logits = net.logits(w, test.x)
    loss, _ = _loss_and_delta(net.loss, logits, test.y, net.num_classes)
    accuracy = float(np.mean(np.argmax(logits, axis=1) == test.y))
    return loss, accuracy


def oracle_importance(net: Network, w: ModelWeights, data: Dataset, position: int) -> float:
    """Squared change in local loss when one fully-connected weight is zeroed.

    ``position`` indexes the fully-connected segment.  Expensive: one full
    loss evaluation per call, so only used to sanity-check cheaper scores.
    """
    if not 0 <= position < w.arch.fc_weight_count:
        raise IndexError(f"position {position} outside the fully-connected segment")
    values = np.array(w.values)
    values[w.arch.conv_weight_count + position] = 0.0
    delta = local_loss(net, w, data) - local_loss(net, w.with_values(values), data)
    return delta * delta


def partition(
    data: Dataset,
    n_parts: int,
    mode: str = "iid",
    seed: int = 0,
    shards_per_device: int = 2,
) -> list[Dataset]:
    """Split ``data`` into disjoint device datasets.

    ``iid`` shuffles and deals near-equal parts.  ``label_skew`` sorts by
    label, cuts ``n_parts * shards_per_device`` contiguous shards and deals
    them out at random, so each device sees only a few classes.
    """
    if n_parts < 1:
        raise ValueError("n_parts must be >= 1")
    if n_parts > len(data):
        raise ValueError(f"cannot split {len(data)} samples into {n_parts} parts")
    rng = np.random.default_rng(seed)
    if mode == "iid":
        return [data.subset(idx) for idx in np.array_split(rng.permutation(len(data)), n_parts)]
    if mode == "label_skew":
        n_shards = n_parts * shards_per_device
        if n_shards > len(data):
            raise ValueError(f"{n_shards} shards need at least that many samples")
        order = np.argsort(data.y, kind="stable")
        shards = np.array_split(order, n_shards)
        dealt = rng.permutation(n_shards)
        return [
            data.subset(np.concatenate([shards[s] for s in dealt[i * shards_per_device : (i + 1) * shards_per_device]]))
            for i in range(n_parts)
        ]
    raise ValueError(f"unknown partition mode {mode!r}")


def concat(parts: Sequence[Dataset]) -> Dataset:
    return Dataset(
        np.concatenate([p.x for p in parts]),
        np.concatenate([p.y for p in parts]),
        parts[0].num_classes,
    )
