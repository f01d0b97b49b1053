"""Dataset generation, training, evaluation and the repeated-graph benchmark."""

from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from graphcnn.aggregation import AggregationGNN, InnerLayerConfig, MultinodeGNN, OuterLayerConfig
from graphcnn.config import ExperimentConfig, config_from_dict, save_config
from graphcnn.data import LabeledDataset, read_dataset, write_dataset
from graphcnn.graph import (
    GraphShiftOperator,
    community_sources,
    diffuse_source_dataset,
    normalized_laplacian,
    read_edge_list,
    sbm_generate,
    scale_by_spectral_radius,
    write_edge_list,
)
from graphcnn.nn.checkpoint import load_checkpoint, save_checkpoint
from graphcnn.nn.module import Module
from graphcnn.sampling import NodeSelectionPlan, select_nodes
from graphcnn.selection import SelectionGNN, SelectionLayerConfig
from graphcnn.training import TrainingAborted, TrainingSettings, TrainingTrace, evaluate_accuracy, train

GRAPH_FILE = "graph.txt"
SOURCES_FILE = "sources.txt"
SPLIT_FILES = {"train": "train.gcnd", "validation": "validation.gcnd", "test": "test.gcnd"}
CHECKPOINT_FILE = "model.ckpt"
PLAN_FILE = "plan.txt"
REPORT_FILE = "report.txt"
CELLS_FILE = "cells.csv"


def derive_seed(base: int, *path: int) -> int:
    """Deterministic child seed for benchmark cell ``path``; the all-zero path keeps ``base``."""
    if not any(path):
        return int(base)
    return int(np.random.SeedSequence([base, *path]).generate_state(1)[0])


def _to_variant(gso: GraphShiftOperator, name: str) -> GraphShiftOperator:
    if name == "scaled_adjacency":
        return scale_by_spectral_radius(gso)
    if name == "normalized_laplacian":
        return normalized_laplacian(gso)
    return gso


def build_graph(cfg: ExperimentConfig, graph_seed: int) -> tuple[GraphShiftOperator, GraphShiftOperator, list[int]]:
    """Return ``(raw adjacency, model operator, source nodes)``."""
    g = cfg.graph
    if g.source == "sbm":
        raw, communities = sbm_generate(g.n_nodes, g.n_communities, g.p_in, g.p_out, graph_seed)
        sources = community_sources(raw, communities)
    else:
        raw = read_edge_list(g.edge_list)
        sources = [int(s) for s in cfg.data.sources]
    return raw, _to_variant(raw, g.gso), sources


def make_splits(cfg: ExperimentConfig, gso: GraphShiftOperator, sources: list[int],
                data_seed: int) -> dict[str, LabeledDataset]:
    """Diffused-source samples split into train / validation / test."""
    d = cfg.data
    # diffusion uses the spectrally normalized adjacency whatever operator the model sees
    diffusion = gso if gso.variant.value == "scaled_adjacency" else scale_by_spectral_radius(gso)
    full = diffuse_source_dataset(diffusion, sources, d.max_t, d.n_train + d.n_validation + d.n_test, data_seed)
    train_set, val_set, test_set = full.split(d.n_train, d.n_validation, d.n_test)
    return {"train": train_set, "validation": val_set, "test": test_set}


def build_plan(cfg: ExperimentConfig, gso: GraphShiftOperator) -> NodeSelectionPlan:
    m = cfg.model
    if m.architecture == "selection":
        counts = m.selection.counts
    elif m.architecture == "aggregation":
        counts = [1]
    else:
        counts = m.multinode.nodes
    options = {}
    if m.sampling == "eds" and m.eds_basis:
        options["n_basis"] = m.eds_basis
    if m.sampling == "sp":
        options["proxy_order"] = m.proxy_order
    return select_nodes(m.sampling, gso, counts, **options)


def build_model(cfg: ExperimentConfig, gso: GraphShiftOperator, plan: NodeSelectionPlan,
                n_classes: int, init_seed: int) -> Module:
    m = cfg.model
    if m.architecture == "selection":
        s = m.selection
        layers = [SelectionLayerConfig(k, f, n, a, s.threshold, bias=s.bias)
                  for k, f, n, a in zip(s.taps, s.features, s.counts, s.reach)]
        return SelectionGNN(gso, plan, layers, n_classes, rng_seed=init_seed, conv_mode=s.conv_mode)
    if m.architecture == "aggregation":
        a = m.aggregation
        inner = [InnerLayerConfig(k, f, p, bias=a.bias) for k, f, p in zip(a.taps, a.features, a.pool)]
        return AggregationGNN(gso, int(plan.nodes(1)[0]), inner, n_classes,
                              length=a.length or None, rng_seed=init_seed)
    mn = m.multinode
    outer = [OuterLayerConfig(p, q, tuple(InnerLayerConfig(k, f, pl, bias=mn.bias) for k, f, pl in zip(ks, fs, pls)))
             for p, q, fs, ks, pls in zip(mn.nodes, mn.shifts, mn.features, mn.taps, mn.pool)]
    return MultinodeGNN(gso, plan, outer, n_classes, share_nodes=mn.share_nodes, rng_seed=init_seed)


def training_settings(cfg: ExperimentConfig) -> TrainingSettings:
    t = cfg.training
    return TrainingSettings(epochs=t.epochs, batch_size=t.batch_size, learning_rate=t.learning_rate,
                            beta1=t.beta1, beta2=t.beta2, eps=t.eps, validate_every=t.validate_every)


def write_trace(trace: TrainingTrace, out: Path) -> None:
    lines = ["step,train_loss"] + [f"{i + 1},{v!r}" for i, v in enumerate(trace.train_loss)]
    (out / "train_loss.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    lines = ["step,validation_loss"] + [f"{s},{v!r}" for s, v in trace.validation_loss]
    (out / "validation_loss.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- report

@dataclass
class MetricsReport:
    architecture: str
    sampling: str
    # (graph index, realization index, accuracy)
    cells: list = field(default_factory=list)
    final_train_loss: list = field(default_factory=list)
    wall_clock_seconds: float = 0.0
    config: dict = field(default_factory=dict)

    def graph_means(self) -> list[float]:
        graphs = sorted({g for g, _, _ in self.cells})
        return [float(np.mean([a for g2, _, a in self.cells if g2 == g])) for g in graphs]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.graph_means()))

    @property
    def std_accuracy(self) -> float:
        """Spread of the per-graph means (population standard deviation)."""
        return float(np.std(self.graph_means()))

    def to_text(self) -> str:
        kv = [("architecture", self.architecture), ("sampling", self.sampling),
              ("n_cells", len(self.cells))]
        kv += [(f"cell.{g}.{r}.accuracy", repr(a)) for g, r, a in self.cells]
        kv += [(f"graph.{i}.mean_accuracy", repr(m)) for i, m in enumerate(self.graph_means())]
        kv += [("mean_accuracy", repr(self.mean_accuracy)), ("std_accuracy", repr(self.std_accuracy))]
        kv += [(f"cell.{g}.{r}.final_train_loss", repr(l))
               for (g, r, _), l in zip(self.cells, self.final_train_loss)]
        kv += [("wall_clock_seconds", f"{self.wall_clock_seconds:.3f}")]
        lines = ["[metrics]"] + [f"{k}={v}" for k, v in kv]
        lines += ["", "[table]", f"{'graph':>5} {'realization':>11} {'accuracy':>9}"]
        lines += [f"{g:>5} {r:>11} {100 * a:>8.1f}%" for g, r, a in self.cells]
        lines += [f"{self.architecture}/{self.sampling}: {100 * self.mean_accuracy:.1f} "
                  f"(+/- {100 * self.std_accuracy:.1f})%"]
        lines += ["", "[config]", config_from_dict(self.config).to_toml().rstrip()] if self.config else []
        return "\n".join(lines) + "\n"

    @classmethod
    def parse_metrics(cls, text: str) -> dict[str, str]:
        """The machine-readable ``key=value`` section of a rendered report."""
        out, active = {}, False
        for line in text.splitlines():
            if line.startswith("["):
                active = line.strip() == "[metrics]"
                continue
            if active and "=" in line:
                k, v = line.split("=", 1)
                out[k.strip()] = v.strip()
        return out


# ---------------------------------------------------------------- commands

def cmd_generate(cfg: ExperimentConfig, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    raw, gso, sources = build_graph(cfg, cfg.seeds.graph)
    splits = make_splits(cfg, gso, sources, cfg.seeds.data)
    write_edge_list(raw, out / GRAPH_FILE)
    (out / SOURCES_FILE).write_text(" ".join(map(str, sources)) + "\n", encoding="utf-8")
    for name, ds in splits.items():
        write_dataset(ds, out / SPLIT_FILES[name])
    save_config(cfg, out / "config.toml")
    return out


def _load_generated(cfg: ExperimentConfig, out: Path):
    raw = read_edge_list(out / GRAPH_FILE)
    gso = _to_variant(raw, cfg.graph.gso)
    sources = [int(v) for v in (out / SOURCES_FILE).read_text(encoding="utf-8").split()]
    splits = {name: read_dataset(out / f) for name, f in SPLIT_FILES.items()}
    return gso, sources, splits


def cmd_train(cfg: ExperimentConfig, out) -> TrainingTrace:
    """Train on the files written by :func:`cmd_generate` in ``out``.

    Writes the checkpoint, the node plan, both loss traces and the resolved
    configuration.  On a numerical abort the partial traces are still written.
    """
    out = Path(out)
    gso, sources, splits = _load_generated(cfg, out)
    plan = build_plan(cfg, gso)
    plan.save(out / PLAN_FILE)
    model = build_model(cfg, gso, plan, len(sources), cfg.seeds.init)
    save_config(cfg, out / "config.toml")
    try:
        trace = train(model, splits["train"], splits["validation"], training_settings(cfg), cfg.seeds.shuffle)
    except TrainingAborted as exc:
        write_trace(exc.trace, out)
        raise
    save_checkpoint(model.state_dict(), out / CHECKPOINT_FILE)
    write_trace(trace, out)
    return trace


def cmd_evaluate(cfg: ExperimentConfig, out, checkpoint=None) -> MetricsReport:
    out = Path(out)
    start = time.perf_counter()
    gso, sources, splits = _load_generated(cfg, out)
    plan = NodeSelectionPlan.load(out / PLAN_FILE) if (out / PLAN_FILE).exists() else build_plan(cfg, gso)
    model = build_model(cfg, gso, plan, len(sources), cfg.seeds.init)
    model.load_state_dict(load_checkpoint(checkpoint or out / CHECKPOINT_FILE))
    acc = evaluate_accuracy(model, splits["test"])
    report = MetricsReport(cfg.model.architecture, cfg.model.sampling, [(0, 0, acc)], [float("nan")],
                           time.perf_counter() - start, cfg.to_dict())
    trace_file = out / "train_loss.csv"
    if trace_file.exists():
        last = trace_file.read_text(encoding="utf-8").strip().splitlines()[-1].split(",")[1]
        report.final_train_loss = [float(last)] if last != "train_loss" else [float("nan")]
    (out / REPORT_FILE).write_text(report.to_text(), encoding="utf-8")
    return report


def run_cell(cfg_dict: dict, graph_index: int, realization: int) -> tuple[int, int, float, float, list, list]:
    """One benchmark cell; module-level so worker processes can import it."""
    cfg = config_from_dict(cfg_dict)
    s = cfg.seeds
    _, gso, sources = build_graph(cfg, derive_seed(s.graph, graph_index))
    splits = make_splits(cfg, gso, sources, derive_seed(s.data, graph_index, realization))
    plan = build_plan(cfg, gso)
    model = build_model(cfg, gso, plan, len(sources), derive_seed(s.init, graph_index, realization))
    trace = train(model, splits["train"], splits["validation"], training_settings(cfg),
                  derive_seed(s.shuffle, graph_index, realization))
    acc = evaluate_accuracy(model, splits["test"])
    return graph_index, realization, acc, trace.train_loss[-1] if trace.train_loss else float("nan"), \
        trace.train_loss, trace.validation_loss


def cmd_benchmark(cfg: ExperimentConfig, out, n_graphs: int | None = None,
                  n_realizations: int | None = None, workers: int | None = None) -> MetricsReport:
    """Train and test on every (graph, realization) cell and aggregate per graph.

    Each finished cell is appended to ``cells.csv`` at once, so an interrupted
    benchmark keeps its completed results.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    b = cfg.benchmark
    n_graphs = n_graphs or b.n_graphs
    n_realizations = n_realizations or b.n_realizations
    workers = workers or b.workers
    cfg = dataclasses.replace(cfg, benchmark=dataclasses.replace(b, n_graphs=n_graphs,
                                                                 n_realizations=n_realizations, workers=workers))
    save_config(cfg, out / "config.toml")
    cells_path = out / CELLS_FILE
    cells_path.write_text("graph,realization,accuracy,final_train_loss\n", encoding="utf-8")
    jobs = [(g, r) for g in range(n_graphs) for r in range(n_realizations)]
    start = time.perf_counter()
    cfg_dict = cfg.to_dict()
    results = []

    def record(res):
        g, r, acc, loss, train_loss, val_loss = res
        results.append(res)
        with open(cells_path, "a", encoding="utf-8") as fh:
            fh.write(f"{g},{r},{acc!r},{loss!r}\n")
        write_trace(TrainingTrace(train_loss, val_loss), _cell_dir(out, g, r))

    if workers == 1:
        for g, r in jobs:
            record(run_cell(cfg_dict, g, r))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_cell, cfg_dict, g, r) for g, r in jobs]
            for fut in futures:
                record(fut.result())
    results.sort(key=lambda res: (res[0], res[1]))
    report = MetricsReport(cfg.model.architecture, cfg.model.sampling,
                           [(g, r, acc) for g, r, acc, *_ in results], [res[3] for res in results],
                           time.perf_counter() - start, cfg_dict)
    (out / REPORT_FILE).write_text(report.to_text(), encoding="utf-8")
    return report


def _cell_dir(out: Path, g: int, r: int) -> Path:
    d = out / f"cell_{g}_{r}"
    d.mkdir(exist_ok=True)
    return d
