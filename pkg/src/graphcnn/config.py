"""Experiment configuration stored as TOML.

Every field has a default matching the SBM source-localization setup, so an
empty file is a valid configuration.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ARCHITECTURES = ("selection", "aggregation", "multinode")
SAMPLINGS = ("degree", "eds", "sp")
GSO_VARIANTS = ("raw_adjacency", "scaled_adjacency", "normalized_laplacian")


class ConfigError(ValueError):
    pass


@dataclass
class GraphSection:
    source: str = "sbm"
    n_nodes: int = 100
    n_communities: int = 5
    p_in: float = 0.8
    p_out: float = 0.2
    edge_list: str = ""
    gso: str = "scaled_adjacency"


@dataclass
class DataSection:
    max_t: int = 25
    n_train: int = 8000
    n_validation: int = 2000
    n_test: int = 200
    # source nodes for edge-list graphs; SBM graphs use each community's top-degree node
    sources: list = field(default_factory=list)


@dataclass
class SeedSection:
    graph: int = 1
    data: int = 2
    init: int = 3
    shuffle: int = 4


@dataclass
class TrainingSection:
    epochs: int = 40
    batch_size: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    validate_every: int = 20


@dataclass
class SelectionSection:
    counts: list = field(default_factory=lambda: [10, 10])
    features: list = field(default_factory=lambda: [32, 32])
    taps: list = field(default_factory=lambda: [5, 5])
    reach: list = field(default_factory=lambda: [6, 8])
    threshold: float = 0.0
    bias: bool = True
    conv_mode: str = "reduced"


@dataclass
class AggregationSection:
    features: list = field(default_factory=lambda: [16, 32])
    taps: list = field(default_factory=lambda: [4, 8])
    pool: list = field(default_factory=lambda: [2, 2])
    # 0 means one sample per node
    length: int = 0
    bias: bool = True


@dataclass
class MultinodeSection:
    nodes: list = field(default_factory=lambda: [10, 5])
    shifts: list = field(default_factory=lambda: [7, 5])
    features: list = field(default_factory=lambda: [[16, 16], [16, 32]])
    taps: list = field(default_factory=lambda: [[3, 3], [3, 3]])
    pool: list = field(default_factory=lambda: [[2, 2], [2, 2]])
    share_nodes: bool = True
    bias: bool = True


@dataclass
class ModelSection:
    architecture: str = "selection"
    sampling: str = "degree"
    eds_basis: int = 0
    proxy_order: int = 2
    selection: SelectionSection = field(default_factory=SelectionSection)
    aggregation: AggregationSection = field(default_factory=AggregationSection)
    multinode: MultinodeSection = field(default_factory=MultinodeSection)


@dataclass
class BenchmarkSection:
    n_graphs: int = 2
    n_realizations: int = 2
    workers: int = 1


@dataclass
class ExperimentConfig:
    graph: GraphSection = field(default_factory=GraphSection)
    data: DataSection = field(default_factory=DataSection)
    seeds: SeedSection = field(default_factory=SeedSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    model: ModelSection = field(default_factory=ModelSection)
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)
    out: str = "runs"

    def validate(self) -> "ExperimentConfig":
        g, d, t, m = self.graph, self.data, self.training, self.model
        if g.source not in ("sbm", "edge_list"):
            raise ConfigError(f"graph.source must be 'sbm' or 'edge_list', got {g.source!r}")
        if g.source == "edge_list" and not g.edge_list:
            raise ConfigError("graph.edge_list is required when graph.source = 'edge_list'")
        if g.source == "edge_list" and not d.sources:
            raise ConfigError("data.sources is required for edge-list graphs")
        if g.gso not in GSO_VARIANTS:
            raise ConfigError(f"graph.gso must be one of {GSO_VARIANTS}, got {g.gso!r}")
        if g.source == "sbm":
            if g.n_nodes < 1 or g.n_communities < 1 or g.n_nodes % g.n_communities:
                raise ConfigError("graph.n_nodes must be a positive multiple of graph.n_communities")
            if not 0.0 <= g.p_out <= g.p_in <= 1.0:
                raise ConfigError("need 0 <= graph.p_out <= graph.p_in <= 1")
        if min(d.n_train, d.n_validation, d.n_test) < 1:
            raise ConfigError("dataset split sizes must be positive")
        if d.n_train < d.n_validation:
            raise ConfigError("data.n_train must be at least data.n_validation")
        if d.max_t < 1:
            raise ConfigError("data.max_t must be at least 1")
        if t.epochs < 0 or t.batch_size < 1 or t.validate_every < 1 or not t.learning_rate > 0:
            raise ConfigError("training needs epochs >= 0, batch_size >= 1, validate_every >= 1, learning_rate > 0")
        if m.architecture not in ARCHITECTURES:
            raise ConfigError(f"model.architecture must be one of {ARCHITECTURES}, got {m.architecture!r}")
        if m.sampling not in SAMPLINGS:
            raise ConfigError(f"model.sampling must be one of {SAMPLINGS}, got {m.sampling!r}")
        s = m.selection
        if not len(s.counts) == len(s.features) == len(s.taps) == len(s.reach) or not s.counts:
            raise ConfigError("model.selection lists counts/features/taps/reach must share a nonzero length")
        if s.conv_mode not in ("reduced", "padded"):
            raise ConfigError("model.selection.conv_mode must be 'reduced' or 'padded'")
        a = m.aggregation
        if not len(a.features) == len(a.taps) == len(a.pool) or not a.features:
            raise ConfigError("model.aggregation lists features/taps/pool must share a nonzero length")
        mn = m.multinode
        lists = (mn.nodes, mn.shifts, mn.features, mn.taps, mn.pool)
        if len({len(x) for x in lists}) != 1 or not mn.nodes:
            raise ConfigError("model.multinode lists nodes/shifts/features/taps/pool must share a nonzero length")
        for r, (f, k, p) in enumerate(zip(mn.features, mn.taps, mn.pool)):
            if not len(f) == len(k) == len(p) or not f:
                raise ConfigError(f"model.multinode outer layer {r}: features/taps/pool lengths differ")
        if any(b > a for a, b in zip(mn.nodes, mn.nodes[1:])):
            raise ConfigError("model.multinode.nodes must be nonincreasing")
        b = self.benchmark
        if b.n_graphs < 1 or b.n_realizations < 1 or b.workers < 1:
            raise ConfigError("benchmark sizes and workers must be positive")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where or 'top level'}] must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where or 'top level'}]: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name)
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, path)
            continue
        if isinstance(default, bool):
            ok = isinstance(value, bool)
        elif isinstance(default, int):
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif isinstance(default, float):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            value = float(value) if ok else value
        elif isinstance(default, str):
            ok = isinstance(value, str)
        else:
            ok = isinstance(value, list)
        if not ok:
            raise ConfigError(f"{path} has the wrong type ({type(value).__name__})")
        kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "").validate()


def load_config(path) -> ExperimentConfig:
    raw = Path(path).read_bytes()
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(cfg.to_toml(), encoding="utf-8")
