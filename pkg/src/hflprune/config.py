"""Experiment configuration: sectioned ``key = value`` files.

Every key has a default; an empty file yields the reference simulation
setup (28 dBm, 20 MHz, 3 GHz, eta 0.001, -110 dBm, batch 128, 64-bit
weights, 5 edge servers x 5 devices, Q=10, E=5, 2 local epochs).  Unknown
sections or keys are rejected.
"""
import configparser
import dataclasses
import io
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TopologySection:
    edge_servers: int = 5
    devices_per_edge: int = 5


@dataclass(frozen=True)
class RadioSection:
    tx_power_dbm: float = 28.0
    bandwidth_hz: float = 20e6
    noise_dbm: float = -110.0
    quantization_bits: int = 64
    channel_model: str = "rayleigh"
    pathloss_db: float = 110.0


@dataclass(frozen=True)
class DeviceSection:
    cpu_freq_hz: float = 3e9
    cycles_per_weight: float = 2000.0
    cpu_freq_spread: float = 0.0


@dataclass(frozen=True)
class TrainingSection:
    learning_rate: float = 0.001
    batch_size: int = 128
    global_rounds: int = 10
    edge_rounds: int = 5
    local_epochs: int = 2
    local_iterations: int = 0


@dataclass(frozen=True)
class ModelSection:
    feature_widths: tuple = (32,)
    fc_hidden: tuple = (256,)
    activation: str = "tanh"
    loss: str = "cross_entropy"


@dataclass(frozen=True)
class DataSection:
    source: str = "synthetic"
    classes: int = 10
    dim: int = 64
    per_class: int = 250
    separation: float = 4.0
    test_fraction: float = 0.2
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    max_train: int = 0
    max_test: int = 0
    partition: str = "iid"
    shards_per_device: int = 2


@dataclass(frozen=True)
class ExperimentSection:
    scheme: str = "optimal"
    latency_threshold_ms: float = 30.0
    fixed_ratio: Optional[float] = None
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    topology: TopologySection = field(default_factory=TopologySection)
    radio: RadioSection = field(default_factory=RadioSection)
    device: DeviceSection = field(default_factory=DeviceSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def __post_init__(self):
        validate(self)

    def replace(self, section: str, **changes) -> "ExperimentConfig":
        """Copy with some keys of one section changed."""
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})


SCHEMES = ("optimal", "equal", "no_pruning", "fixed")

_POSITIVE = {
    "topology": ("edge_servers", "devices_per_edge"),
    "radio": ("bandwidth_hz", "quantization_bits"),
    "device": ("cpu_freq_hz", "cycles_per_weight"),
    "training": ("learning_rate", "batch_size", "global_rounds", "edge_rounds", "local_epochs"),
    "data": ("classes", "dim", "per_class", "shards_per_device"),
    "experiment": ("latency_threshold_ms",),
}


def validate(cfg: ExperimentConfig) -> None:
    for section, keys in _POSITIVE.items():
        sec = getattr(cfg, section)
        for key in keys:
            if not getattr(sec, key) > 0:
                raise ConfigError(f"[{section}] {key} must be positive, got {getattr(sec, key)!r}")
    checks = [
        ("radio", "channel_model", cfg.radio.channel_model in ("static", "rayleigh")),
        ("device", "cpu_freq_spread", 0 <= cfg.device.cpu_freq_spread < 1),
        ("training", "local_iterations", cfg.training.local_iterations >= 0),
        ("model", "activation", cfg.model.activation in ("tanh", "relu")),
        ("model", "loss", cfg.model.loss in ("cross_entropy", "mse")),
        ("data", "source", cfg.data.source in ("synthetic", "idx")),
        ("data", "partition", cfg.data.partition in ("iid", "label_skew")),
        ("data", "test_fraction", 0 < cfg.data.test_fraction < 1),
        ("data", "separation", cfg.data.separation >= 0),
        ("experiment", "scheme", cfg.experiment.scheme in SCHEMES),
    ]
    for section, key, ok in checks:
        if not ok:
            raise ConfigError(f"[{section}] {key} has invalid value {getattr(getattr(cfg, section), key)!r}")
    if cfg.experiment.scheme == "fixed" and cfg.experiment.fixed_ratio is None:
        raise ConfigError("[experiment] fixed_ratio is required when scheme = fixed")
    r = cfg.experiment.fixed_ratio
    if r is not None and not 0 <= r <= 1:
        raise ConfigError(f"[experiment] fixed_ratio must lie in [0, 1], got {r}")
    if cfg.data.source == "idx" and not (cfg.data.train_images and cfg.data.train_labels):
        raise ConfigError("[data] train_images and train_labels are required when source = idx")


def _section_types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _convert(section: str, key: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
        if typ is tuple:
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if typ == Optional[float]:
            return None if raw in ("", "none", "None") else float(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from None
    raise TypeError(f"unsupported config type {typ}")


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sections = typing.get_type_hints(ExperimentConfig)
    built = {}
    for name in parser.sections():
        if name not in sections:
            raise ConfigError(f"unknown section [{name}]")
    for name, cls in sections.items():
        types = _section_types(cls)
        values = {}
        if parser.has_section(name):
            for key, raw in parser.items(name):
                if key not in types:
                    raise ConfigError(f"unknown key {key!r} in [{name}]")
                values[key] = _convert(name, key, raw, types[key])
        built[name] = cls(**values)
    return ExperimentConfig(**built)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def dump_config(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    for f in dataclasses.fields(cfg):
        sec = getattr(cfg, f.name)
        parser[f.name] = {k.name: _format(getattr(sec, k.name)) for k in dataclasses.fields(sec)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
