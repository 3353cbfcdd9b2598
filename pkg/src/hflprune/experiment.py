"""Turn an :class:`ExperimentConfig` into a simulation and its CSV output."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

from .allocator import AllocationInputs, AllocationPlan, allocate
from .config import ExperimentConfig
from .data import load_idx, synth_dataset, train_test_split
from .hierarchy import (
    Device,
    RadioConfig,
    RoundMetrics,
    RunConfig,
    RunResult,
    Topology,
    channel_rng,
    run,
)
from .model import ModelArch
from .trainer import Dataset, Network, TrainConfig, partition
from .wireless import ChannelModel, ChannelState, DeviceProfile, db_to_linear, dbm_to_watts


@dataclass(eq=False)
class Experiment:
    net: Network
    topology: Topology
    train: Dataset
    test: Dataset
    run_config: RunConfig
    seed: int

    @property
    def arch(self) -> ModelArch:
        return self.net.arch


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    seed = cfg.experiment.seed
    if d.source == "synthetic":
        full = synth_dataset(d.classes, d.dim, d.per_class, d.separation, seed)
        train, test = train_test_split(full, d.test_fraction, seed)
    else:
        train = load_idx(d.train_images, d.train_labels)
        if d.test_images and d.test_labels:
            test = load_idx(d.test_images, d.test_labels, train.num_classes)
        else:
            train, test = train_test_split(train, d.test_fraction, seed)
    if d.max_train and len(train) > d.max_train:
        train = train.subset(np.arange(d.max_train))
    if d.max_test and len(test) > d.max_test:
        test = test.subset(np.arange(d.max_test))
    return train, test


def build_network(cfg: ExperimentConfig, input_dim: int, classes: int) -> Network:
    m = cfg.model
    return Network(input_dim, m.feature_widths, tuple(m.fc_hidden) + (classes,), m.activation, m.loss)


def build_profiles(cfg: ExperimentConfig, n: int) -> list[DeviceProfile]:
    dev = cfg.device
    power = dbm_to_watts(cfg.radio.tx_power_dbm)
    if dev.cpu_freq_spread == 0:
        freqs = np.full(n, dev.cpu_freq_hz)
    else:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.experiment.seed, spawn_key=(0xF0,)))
        lo, hi = dev.cpu_freq_hz * (1 - dev.cpu_freq_spread), dev.cpu_freq_hz * (1 + dev.cpu_freq_spread)
        freqs = rng.uniform(lo, hi, size=n)
        return [DeviceProfile(float(f), dev.cycles_per_weight, power, lo, hi) for f in freqs]
    return [DeviceProfile(float(f), dev.cycles_per_weight, power) for f in freqs]


def build_radio(cfg: ExperimentConfig) -> RadioConfig:
    r = cfg.radio
    gain = 1.0 / db_to_linear(r.pathloss_db)
    model = ChannelModel(r.channel_model, gain=gain, pathloss=gain)
    return RadioConfig(dbm_to_watts(r.noise_dbm), r.bandwidth_hz, r.quantization_bits, model)


def build_run_config(cfg: ExperimentConfig) -> RunConfig:
    t = cfg.training
    train = TrainConfig(
        learning_rate=t.learning_rate,
        batch_size=t.batch_size,
        local_iterations=t.local_iterations or None,
        local_epochs=t.local_epochs,
    )
    e = cfg.experiment
    return RunConfig(
        train=train,
        radio=build_radio(cfg),
        global_rounds=t.global_rounds,
        edge_rounds=t.edge_rounds,
        latency_threshold=e.latency_threshold_ms / 1000.0,
        scheme=e.scheme,
        fixed_ratio=e.fixed_ratio,
        seed=e.seed,
    )


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    train, test = load_datasets(cfg)
    k, per = cfg.topology.edge_servers, cfg.topology.devices_per_edge
    n = k * per
    parts = partition(train, n, cfg.data.partition, cfg.experiment.seed, cfg.data.shards_per_device)
    profiles = build_profiles(cfg, n)
    devices = tuple(Device(p, d) for p, d in zip(profiles, parts))
    edges = tuple(tuple(range(i * per, (i + 1) * per)) for i in range(k))
    net = build_network(cfg, train.dim, train.num_classes)
    return Experiment(net, Topology(edges, devices), train, test, build_run_config(cfg), cfg.experiment.seed)


def run_experiment(cfg: ExperimentConfig) -> tuple[Experiment, RunResult]:
    exp = build_experiment(cfg)
    w0 = exp.net.init_weights(exp.seed)
    return exp, run(exp.net, exp.topology, w0, exp.run_config, exp.test)


def first_round_plan(cfg: ExperimentConfig) -> tuple[AllocationInputs, AllocationPlan]:
    """Allocation for edge server 0 on the run's first channel draw.

    Uses the same channel stream and per-device iteration counts as
    :func:`run_experiment`, without training anything.
    """
    exp = build_experiment(cfg)
    rc = exp.run_config
    members = exp.topology.edges[0]
    gains = np.asarray(rc.radio.channel.sample(channel_rng(rc.seed), len(members)), dtype=np.float64)
    r = rc.radio
    channels = [ChannelState(float(g), r.noise_power, r.total_bandwidth, r.quantization_bits) for g in gains]
    profiles = [exp.topology.devices[n].profile for n in members]
    iters = [rc.train.iterations_for(len(exp.topology.devices[n].data)) for n in members]
    inputs = AllocationInputs.from_devices(profiles, channels, exp.arch, iters, rc.latency_threshold)
    return inputs, allocate(inputs, rc.scheme, rc.fixed_ratio)


# ---------------------------------------------------------------- output

COLUMNS = [
    "scheme",
    "sweep_value",
    "global_round",
    "edge_server",
    "edge_round",
    "edge_latency_s",
    "mean_ratio",
    "max_ratio",
    "lambda",
    "n_stragglers",
    "uploaded_weights",
    "round_bits",
    "cumulative_bits",
    "min_occurrence",
    "test_loss",
    "test_accuracy",
    "devices",
    "gains",
    "bandwidth",
    "ratios",
    "device_latency_s",
    "stragglers",
]


def _g(x: float) -> str:
    return format(float(x), ".9g")


def _vec(values: Iterable, fmt=_g) -> str:
    return ";".join(fmt(v) for v in values)


def metrics_row(m: RoundMetrics, scheme: str, sweep_value: float | str = "") -> list[str]:
    return [
        scheme,
        _g(sweep_value) if sweep_value != "" else "",
        str(m.global_round),
        str(m.edge_server),
        str(m.edge_round),
        _g(m.edge_latency),
        _g(np.mean(m.ratios)),
        _g(np.max(m.ratios)),
        _g(m.lam),
        str(len(m.stragglers)),
        str(sum(m.uploaded_weights)),
        str(m.round_bits),
        str(m.cumulative_bits),
        str(m.min_occurrence),
        _g(m.test_loss),
        _g(m.test_accuracy),
        _vec(m.devices, str),
        _vec(m.gains),
        _vec(m.bandwidth),
        _vec(m.ratios),
        _vec(x.total for x in m.latencies),
        _vec(sorted(m.stragglers), str),
    ]


class MetricsWriter:
    """CSV sink; the header goes out once, before the first row."""

    def __init__(self, stream: TextIO):
        self._writer = csv.writer(stream, lineterminator="\n")
        self._header_done = False

    def write(self, metrics: Iterable[RoundMetrics], scheme: str, sweep_value: float | str = "") -> None:
        if not self._header_done:
            self._writer.writerow(COLUMNS)
            self._header_done = True
        for m in metrics:
            self._writer.writerow(metrics_row(m, scheme, sweep_value))


def summarize(result: RunResult) -> dict[str, float]:
    rows = result.metrics
    if not rows:
        return {"final_accuracy": math.nan, "final_loss": math.nan, "mean_round_latency_s": math.nan,
                "total_bits": 0, "mean_ratio": math.nan, "stragglers": 0}
    return {
        "final_accuracy": rows[-1].test_accuracy,
        "final_loss": rows[-1].test_loss,
        "mean_round_latency_s": float(np.mean([r.edge_latency for r in rows])),
        "total_bits": rows[-1].cumulative_bits,
        "mean_ratio": float(np.mean(np.concatenate([r.ratios for r in rows]))),
        "stragglers": sum(len(r.stragglers) for r in rows),
    }
