"""Device -> edge -> cloud training loop with per-round pruning and allocation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels
from .allocator import AllocationInputs, AllocationPlan, allocate
from .model import (
    ArchMismatchError,
    ModelWeights,
    PruningMask,
    build_mask,
    importance,
    magnitude_scores,
    realized_weight_count,
)
from .trainer import Dataset, Network, TrainConfig, evaluate, local_update
from .wireless import (
    ChannelModel,
    ChannelState,
    DeviceProfile,
    LatencyBreakdown,
    device_latency,
    edge_round_latency,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Device:
    profile: DeviceProfile
    data: Dataset


@dataclass(frozen=True, eq=False)
class Topology:
    edges: tuple[tuple[int, ...], ...]
    devices: tuple[Device, ...]

    def __post_init__(self):
        edges = tuple(tuple(int(i) for i in members) for members in self.edges)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "devices", tuple(self.devices))
        if not edges or any(len(m) == 0 for m in edges):
            raise ValueError("need at least one edge server and one device per server")
        flat = [i for m in edges for i in m]
        if sorted(flat) != list(range(len(self.devices))):
            raise ValueError("every device must belong to exactly one edge server")


@dataclass(frozen=True)
class RadioConfig:
    noise_power: float
    total_bandwidth: float
    quantization_bits: int
    channel: ChannelModel


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    radio: RadioConfig
    global_rounds: int
    edge_rounds: int
    latency_threshold: float
    scheme: str = "optimal"
    fixed_ratio: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.global_rounds < 0 or self.edge_rounds < 1:
            raise ValueError("need global_rounds >= 0 and edge_rounds >= 1")
        if self.latency_threshold <= 0:
            raise ValueError("latency threshold must be positive")


@dataclass(frozen=True, eq=False)
class RoundMetrics:
    global_round: int
    edge_server: int
    edge_round: int
    devices: tuple[int, ...]
    gains: np.ndarray
    bandwidth: np.ndarray
    ratios: np.ndarray
    stragglers: frozenset[int]
    lam: float
    latencies: tuple[LatencyBreakdown, ...]
    edge_latency: float
    uploaded_weights: tuple[int, ...]
    round_bits: int
    cumulative_bits: int
    min_occurrence: int
    test_loss: float = float("nan")
    test_accuracy: float = float("nan")


@dataclass(eq=False)
class RunResult:
    weights: ModelWeights
    metrics: list[RoundMetrics] = field(default_factory=list)
    global_history: list[ModelWeights] = field(default_factory=list)


def edge_aggregate(
    locals_: Sequence[tuple[ModelWeights, PruningMask]],
    previous: ModelWeights,
) -> ModelWeights:
    """Average each weight over the devices whose mask kept it.

    A weight no device kept keeps its value from ``previous``.
    """
    if not locals_:
        raise ValueError("edge aggregation needs at least one local model")
    arch = previous.arch
    for w, m in locals_:
        if w.arch != arch or m.arch != arch:
            raise ArchMismatchError("local models and masks must share the edge model's architecture")
    stack = np.stack([w.values for w, _ in locals_])
    masks = np.stack([m.bits for _, m in locals_])
    return previous.with_values(kernels.masked_average(stack, masks, previous.values))


def cloud_aggregate(edges: Sequence[ModelWeights]) -> ModelWeights:
    """Unweighted mean of the edge models."""
    if not edges:
        raise ValueError("cloud aggregation needs at least one edge model")
    arch = edges[0].arch
    if any(w.arch != arch for w in edges):
        raise ArchMismatchError("edge models must share one architecture")
    return edges[0].with_values(np.mean(np.stack([w.values for w in edges]), axis=0))


def occurrence_counts(masks: Sequence[PruningMask]) -> np.ndarray:
    return np.sum(np.stack([m.bits for m in masks]), axis=0, dtype=np.int64)


def device_seed(seed: int, global_round: int, edge_server: int, edge_round: int, device: int) -> int:
    """Training RNG seed for one device in one edge round."""
    ss = np.random.SeedSequence(seed, spawn_key=(global_round, edge_server, edge_round, device))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def channel_rng(seed: int) -> np.random.Generator:
    """Channel draws get their own stream so they do not depend on training."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xC4A1,)))


def run(
    net: Network,
    topology: Topology,
    w0: ModelWeights,
    cfg: RunConfig,
    test: Dataset | None = None,
) -> RunResult:
    """Run ``Q`` global rounds of ``E`` edge rounds each.

    Every edge round draws fresh channel gains, allocates bandwidth and
    pruning ratios per ``cfg.scheme``, builds each device's mask from the
    change its previous local update made (magnitude on its first round),
    trains locally and aggregates at the edge.  The cloud averages the edge
    models after ``E`` rounds.  Test metrics, when ``test`` is given, describe
    the global model after that round's cloud aggregation and are attached
    to every row of the round.
    """
    arch = net.arch
    if w0.arch != arch:
        raise ArchMismatchError("initial weights do not match the network")
    result = RunResult(weights=w0)
    rng = channel_rng(cfg.seed)
    history: dict[int, tuple[ModelWeights, ModelWeights]] = {}
    cumulative = 0
    w_global = w0
    radio = cfg.radio

    for q in range(cfg.global_rounds):
        edge_models = []
        round_rows = []
        for k, members in enumerate(topology.edges):
            w_edge = w_global
            for e in range(cfg.edge_rounds):
                gains = np.asarray(radio.channel.sample(rng, len(members)), dtype=np.float64)
                channels = [
                    ChannelState(float(g), radio.noise_power, radio.total_bandwidth, radio.quantization_bits)
                    for g in gains
                ]
                profiles = [topology.devices[n].profile for n in members]
                iters = [cfg.train.iterations_for(len(topology.devices[n].data)) for n in members]
                inputs = AllocationInputs.from_devices(profiles, channels, arch, iters, cfg.latency_threshold)
                plan = allocate(inputs, cfg.scheme, cfg.fixed_ratio)

                locals_ = []
                for i, n in enumerate(members):
                    if n in history:
                        scores = importance(*history[n])
                    else:
                        scores = magnitude_scores(w_edge)
                    mask = build_mask(scores, float(plan.ratios[i]), arch)
                    tc = replace(cfg.train, rng_seed=device_seed(cfg.seed, q, k, e, n))
                    w_local = local_update(net, w_edge, mask, topology.devices[n].data, tc)
                    history[n] = (w_edge, w_local)
                    locals_.append((w_local, mask))

                counts = occurrence_counts([m for _, m in locals_])
                w_edge = edge_aggregate(locals_, w_edge)

                row = _round_metrics(q, k, e, members, gains, plan, profiles, channels, arch, iters, radio, cumulative, counts)
                cumulative = row.cumulative_bits
                round_rows.append(row)
            edge_models.append(w_edge)

        w_global = cloud_aggregate(edge_models)
        result.global_history.append(w_global)
        if test is not None:
            loss, acc = evaluate(net, w_global, test)
            round_rows = [replace(r, test_loss=loss, test_accuracy=acc) for r in round_rows]
            log.info("round %d: test loss %.4f acc %.4f", q, loss, acc)
        result.metrics.extend(round_rows)

    result.weights = w_global
    return result


def _round_metrics(q, k, e, members, gains, plan: AllocationPlan, profiles, channels, arch, iters, radio, cumulative, counts):
    lat = tuple(
        device_latency(p, ch, float(b), arch, float(r), t)
        for p, ch, b, r, t in zip(profiles, channels, plan.bandwidth, plan.ratios, iters)
    )
    uploaded = tuple(realized_weight_count(arch, float(r)) for r in plan.ratios)
    bits = sum(uploaded) * radio.quantization_bits
    positive = counts[counts > 0]
    return RoundMetrics(
        global_round=q,
        edge_server=k,
        edge_round=e,
        devices=tuple(members),
        gains=gains,
        bandwidth=np.asarray(plan.bandwidth),
        ratios=np.asarray(plan.ratios),
        stragglers=frozenset(members[i] for i in plan.stragglers),
        lam=plan.lam,
        latencies=lat,
        edge_latency=edge_round_latency([x.total for x in lat]),
        uploaded_weights=uploaded,
        round_bits=bits,
        cumulative_bits=cumulative + bits,
        min_occurrence=int(positive.min()) if positive.size else 0,
    )
