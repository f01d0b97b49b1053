import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from graphcnn import experiment
from graphcnn.cli import main
from graphcnn.config import ConfigError, ExperimentConfig, config_from_dict, load_config, save_config
from graphcnn.data import ContainerError, LabeledDataset, read_dataset, write_dataset
from graphcnn.graph import read_edge_list, weighted_degree
from graphcnn.nn import load_checkpoint

SMALL = {
    "graph": {"n_nodes": 20, "n_communities": 2},
    "data": {"n_train": 120, "n_validation": 30, "n_test": 40, "max_t": 10},
    "training": {"epochs": 2, "batch_size": 20, "validate_every": 3},
    "model": {
        "selection": {"counts": [10, 5], "features": [4, 4], "taps": [3, 3], "reach": [2, 2]},
        "aggregation": {"features": [4, 4], "taps": [3, 3], "pool": [2, 2]},
        "multinode": {"nodes": [6, 3], "shifts": [4, 4], "features": [[4], [4]], "taps": [[2], [2]],
                      "pool": [[2], [2]]},
    },
}


def small(**model):
    d = {k: dict(v) for k, v in SMALL.items()}
    d["model"] = {**SMALL["model"], **model}
    return config_from_dict(d)


# ---------------------------------------------------------------- config

def test_default_config_matches_benchmark_setup():
    cfg = ExperimentConfig().validate()
    assert (cfg.graph.n_nodes, cfg.graph.n_communities, cfg.graph.p_in, cfg.graph.p_out) == (100, 5, 0.8, 0.2)
    assert cfg.data.n_train + cfg.data.n_validation == 10_000 and cfg.data.n_test == 200
    assert (cfg.training.epochs, cfg.training.batch_size, cfg.training.learning_rate) == (40, 100, 1e-3)
    assert cfg.training.validate_every == 20


def test_config_toml_round_trip(tmp_path):
    cfg = small(architecture="multinode", sampling="sp")
    save_config(cfg, tmp_path / "c.toml")
    assert load_config(tmp_path / "c.toml") == cfg


def test_empty_file_is_default(tmp_path):
    (tmp_path / "c.toml").write_text("")
    assert load_config(tmp_path / "c.toml") == ExperimentConfig()


@pytest.mark.parametrize("bad", [
    {"grpah": {}},
    {"graph": {"n_nodes": "100"}},
    {"graph": {"n_nodes": 101}},
    {"data": {"n_test": 0}},
    {"data": {"n_train": 10, "n_validation": 20}},
    {"model": {"architecture": "transformer"}},
    {"model": {"sampling": "random"}},
    {"model": {"selection": {"counts": [10]}}},
    {"training": {"learning_rate": 0}},
    {"graph": {"source": "edge_list"}},
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_malformed_toml(tmp_path):
    (tmp_path / "c.toml").write_text("[graph\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.toml")


# ---------------------------------------------------------------- containers

@settings(max_examples=30, deadline=None)
@given(st.integers(0, 5), st.integers(1, 3), st.integers(1, 6), st.data())
def test_dataset_round_trip_bitwise(m, f, n, data):
    import tempfile
    from pathlib import Path
    x = data.draw(arrays(np.float64, (m, f, n), elements=st.floats(allow_nan=False, allow_infinity=False)))
    y = data.draw(arrays(np.int64, m, elements=st.integers(0, 2**40)))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "d.gcnd"
        write_dataset(LabeledDataset(x, y), path)
        back = read_dataset(path)
    assert back.signals.tobytes() == x.tobytes() and back.labels.tobytes() == y.tobytes()


def test_dataset_rejects_truncation(tmp_path):
    write_dataset(LabeledDataset(np.ones((3, 1, 4)), np.arange(3)), tmp_path / "d.gcnd")
    raw = (tmp_path / "d.gcnd").read_bytes()
    (tmp_path / "d.gcnd").write_bytes(raw[:-5])
    with pytest.raises(ContainerError):
        read_dataset(tmp_path / "d.gcnd")
    (tmp_path / "e.gcnd").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(ContainerError):
        read_dataset(tmp_path / "e.gcnd")


# ---------------------------------------------------------------- report

def test_std_is_spread_of_graph_means():
    cells = [(0, 0, 0.9), (0, 1, 0.7), (1, 0, 0.6), (1, 1, 0.6), (2, 0, 1.0), (2, 1, 0.8)]
    report = experiment.MetricsReport("selection", "degree", cells)
    means = [0.8, 0.6, 0.9]
    assert report.graph_means() == pytest.approx(means)
    assert report.mean_accuracy == pytest.approx(sum(means) / 3)
    mu = sum(means) / 3
    assert report.std_accuracy == pytest.approx(((sum((m - mu) ** 2 for m in means)) / 3) ** 0.5)


def test_report_text_has_metrics_and_table():
    report = experiment.MetricsReport("aggregation", "eds", [(0, 0, 0.5), (1, 0, 1.0)], [0.3, 0.2], 1.5,
                                      ExperimentConfig().to_dict())
    text = report.to_text()
    kv = experiment.MetricsReport.parse_metrics(text)
    assert float(kv["mean_accuracy"]) == 0.75 and float(kv["std_accuracy"]) == 0.25
    assert kv["cell.1.0.accuracy"] == "1.0"
    assert "[table]" in text and "aggregation/eds: 75.0 (+/- 25.0)%" in text
    assert "[config]" in text and "n_nodes = 100" in text


# ---------------------------------------------------------------- commands

def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def test_generate_sbm_sources_and_split(tmp_path):
    cfg = dataclasses.replace(ExperimentConfig(), data=dataclasses.replace(ExperimentConfig().data, n_train=300,
                                                                           n_validation=100))
    out = experiment.cmd_generate(cfg, tmp_path)
    sources = [int(v) for v in (out / "sources.txt").read_text().split()]
    assert len(sources) == 5
    deg = weighted_degree(read_edge_list(out / "graph.txt"))
    for c, s in enumerate(sources):
        members = np.arange(20 * c, 20 * (c + 1))
        assert s in members
        assert deg[s] == deg[members].max()
        assert s == members[np.flatnonzero(deg[members] == deg[members].max())[0]]
    assert len(read_dataset(out / "test.gcnd")) == 200
    assert len(read_dataset(out / "train.gcnd")) == 300


def test_generate_is_bitwise_reproducible(tmp_path):
    cfg = small()
    a = _files(experiment.cmd_generate(cfg, tmp_path / "a"))
    b = _files(experiment.cmd_generate(cfg, tmp_path / "b"))
    assert a == b
    c = _files(experiment.cmd_generate(dataclasses.replace(cfg, seeds=dataclasses.replace(cfg.seeds, data=9)),
                                       tmp_path / "c"))
    assert c["train.gcnd"] != a["train.gcnd"] and c["graph.txt"] == a["graph.txt"]


@pytest.mark.parametrize("arch,sampling", [("selection", "degree"), ("aggregation", "eds"), ("multinode", "sp")])
def test_train_twice_identical(tmp_path, arch, sampling):
    cfg = small(architecture=arch, sampling=sampling)
    for d in ("a", "b"):
        experiment.cmd_generate(cfg, tmp_path / d)
        experiment.cmd_train(cfg, tmp_path / d)
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    assert (tmp_path / "a" / "validation_loss.csv").read_text().splitlines()[1].startswith("3,")


def test_zero_epochs_checkpoint_is_initialization(tmp_path):
    cfg = small()
    cfg = dataclasses.replace(cfg, training=dataclasses.replace(cfg.training, epochs=0))
    experiment.cmd_generate(cfg, tmp_path)
    experiment.cmd_train(cfg, tmp_path)
    raw, gso, sources = experiment.build_graph(cfg, cfg.seeds.graph)
    model = experiment.build_model(cfg, gso, experiment.build_plan(cfg, gso), len(sources), cfg.seeds.init)
    saved = load_checkpoint(tmp_path / "model.ckpt")
    for k, v in model.state_dict().items():
        assert saved[k].tobytes() == v.tobytes()


def test_evaluate_is_deterministic(tmp_path):
    cfg = small()
    experiment.cmd_generate(cfg, tmp_path)
    experiment.cmd_train(cfg, tmp_path)
    a = experiment.cmd_evaluate(cfg, tmp_path)
    b = experiment.cmd_evaluate(cfg, tmp_path)
    assert a.cells == b.cells and 0.0 <= a.cells[0][2] <= 1.0


def test_single_cell_benchmark_equals_train_and_evaluate(tmp_path):
    cfg = small(architecture="aggregation", sampling="eds")
    experiment.cmd_generate(cfg, tmp_path / "single")
    trace = experiment.cmd_train(cfg, tmp_path / "single")
    single = experiment.cmd_evaluate(cfg, tmp_path / "single")
    bench = experiment.cmd_benchmark(cfg, tmp_path / "bench", 1, 1, 1)
    assert bench.cells == single.cells
    assert bench.final_train_loss == [trace.train_loss[-1]]


def test_benchmark_persists_cells(tmp_path):
    cfg = small()
    report = experiment.cmd_benchmark(cfg, tmp_path, 2, 2, 1)
    rows = (tmp_path / "cells.csv").read_text().strip().splitlines()
    assert rows[0] == "graph,realization,accuracy,final_train_loss" and len(rows) == 5
    assert sorted((g, r) for g, r, _ in report.cells) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert (tmp_path / "cell_1_1" / "train_loss.csv").exists()
    assert (tmp_path / "report.txt").read_text() == report.to_text()


def test_benchmark_workers_match_serial(tmp_path):
    cfg = small()
    serial = experiment.cmd_benchmark(cfg, tmp_path / "s", 2, 1, 1)
    pooled = experiment.cmd_benchmark(cfg, tmp_path / "p", 2, 1, 2)
    assert serial.cells == pooled.cells


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_abort_keeps_partial_trace(tmp_path):
    cfg = small()
    experiment.cmd_generate(cfg, tmp_path)
    blown = dataclasses.replace(cfg, training=dataclasses.replace(cfg.training, learning_rate=1e308))
    assert main(["train", "--config", _write(tmp_path, blown), "--out", str(tmp_path)]) == 2
    assert (tmp_path / "train_loss.csv").exists()


# ---------------------------------------------------------------- cli

def _write(tmp_path, cfg):
    path = tmp_path / "cfg.toml"
    save_config(cfg, path)
    return str(path)


def test_cli_round_trip(tmp_path, capsys):
    cfg_path = _write(tmp_path, small())
    out = str(tmp_path / "run")
    assert main(["generate", "--config", cfg_path, "--out", out, "--seed-graph", "5"]) == 0
    assert main(["train", "--config", cfg_path, "--out", out, "--seed-graph", "5", "--arch", "multinode",
                 "--sampling", "sp"]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--config", cfg_path, "--out", out, "--seed-graph", "5", "--arch", "multinode",
                 "--sampling", "sp"]) == 0
    kv = experiment.MetricsReport.parse_metrics(capsys.readouterr().out)
    assert kv["architecture"] == "multinode" and 0.0 <= float(kv["mean_accuracy"]) <= 1.0


def test_cli_exit_codes(tmp_path):
    (tmp_path / "bad.toml").write_text("[model]\narchitecture = 'rnn'\n")
    assert main(["generate", "--config", str(tmp_path / "bad.toml")]) == 1
    assert main(["generate", "--config", str(tmp_path / "missing.toml")]) == 3
    cfg_path = _write(tmp_path, small())
    out = tmp_path / "run"
    assert main(["generate", "--config", cfg_path, "--out", str(out)]) == 0
    (out / "train.gcnd").write_bytes(b"garbage")
    assert main(["train", "--config", cfg_path, "--out", str(out)]) == 3


def test_cli_checkpoint_mismatch_is_config_error(tmp_path):
    cfg_path = _write(tmp_path, small())
    out = str(tmp_path / "run")
    assert main(["generate", "--config", cfg_path, "--out", out]) == 0
    assert main(["train", "--config", cfg_path, "--out", out]) == 0
    # the checkpoint holds aggregation weights, whose names a multinode model does not use
    assert main(["evaluate", "--config", cfg_path, "--out", out, "--arch", "multinode"]) == 1


def test_cli_selftest_quick(capsys):
    code = main(["selftest", "--quick"])
    lines = capsys.readouterr().out.strip().splitlines()
    failed = [l for l in lines if l.startswith("FAIL")]
    assert code == (2 if failed else 0)
    assert lines[-1].endswith("checks passed")
