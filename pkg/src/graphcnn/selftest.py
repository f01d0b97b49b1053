"""Oracle and property checks runnable from the command line.

Each check returns a :class:`CheckResult`; the acceptance tests call the
same functions, so ``graphcnn selftest`` and ``pytest`` agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from graphcnn import oracles
from graphcnn.aggregation import (
    AggregationGNN,
    InnerLayerConfig,
    MultinodeGNN,
    OuterLayerConfig,
    aggregate_at_node,
    aggregation_matrix,
    reconstruct_from_aggregate,
)
from graphcnn.graph import GraphShiftOperator, Variant, directed_cycle, from_dense
from graphcnn.nn import cross_entropy, gradient_check
from graphcnn.sampling import (
    STRATEGIES,
    check_sampling_matrix,
    nested_sampling,
    reduced_k_shifts,
    regular_plan,
    select_by_eds,
    select_nodes,
)
from graphcnn.selection import SelectionGNN, SelectionLayerConfig, graph_conv_padded, graph_conv_reduced


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def random_connected_graph(rng: np.random.Generator, n: int, p: float = 0.35,
                           weighted: bool = True) -> GraphShiftOperator:
    """Undirected connected random graph, spectrally normalized."""
    while True:
        mask = np.triu(rng.random((n, n)) < p, 1)
        w = rng.uniform(0.5, 1.5, (n, n)) if weighted else np.ones((n, n))
        a = np.where(mask, w, 0.0)
        a = a + a.T
        if n == 1 or connected_components(a, directed=False)[0] == 1:
            return from_dense(a / np.abs(np.linalg.eigvalsh(a)).max(), Variant.SCALED_ADJACENCY)


def _randomize(model, rng: np.random.Generator) -> None:
    for p in model.parameters():
        p.data[...] = rng.standard_normal(p.data.shape)


# ---------------------------------------------------------------- cycles

def cyclic_selection(n_draws: int = 100, seed: int = 0) -> CheckResult:
    """Selection GNN on the directed 12-cycle against a circular-convolution CNN."""
    rng = np.random.default_rng(seed)
    gso = directed_cycle(12)
    plan = regular_plan(12, [6, 3])
    worst = 0.0
    for draw in range(n_draws):
        k1, k2 = (int(v) for v in rng.integers(1, 7, 2))
        a1, a2 = (int(v) for v in rng.integers(0, 6, 2))
        g_in, f1, f2 = (int(v) for v in rng.integers(1, 4, 3))
        layers = [SelectionLayerConfig(k1, f1, 6, a1), SelectionLayerConfig(k2, f2, 3, a2)]
        model = SelectionGNN(gso, plan, layers, 4, in_features=g_in, rng_seed=draw)
        _randomize(model, rng)
        x = rng.standard_normal((g_in, 12))
        # layer 1 runs on all 12 samples; layer 2 sees every other sample, so only even
        # shift powers survive (tap j of the CNN is graph tap 2j) and reach a2 covers a2 // 2 steps
        v = oracles.conventional_cnn_layer(x, model.layer_taps(0).data, a1, 2, True, model.biases[0].data)
        v = oracles.conventional_cnn_layer(v, model.layer_taps(1).data[::2], a2 // 2, 2, True, model.biases[1].data)
        ref = oracles.readout(v, model.readout_weight.data, model.readout_bias.data)
        worst = max(worst, float(np.abs(model(x[None]).data[0] - ref).max()))
    return CheckResult("cyclic selection = circular CNN", worst <= 1e-10,
                       f"max abs error {worst:.2e} over {n_draws} draws (bound 1e-10)")


def cyclic_aggregation(n_draws: int = 100, seed: int = 1) -> CheckResult:
    """Aggregation GNN on the directed 12-cycle against a CNN on the rotated signal."""
    rng = np.random.default_rng(seed)
    n = 12
    gso = directed_cycle(n)
    worst = 0.0
    for draw in range(n_draws):
        node = int(rng.integers(n))
        g_in = int(rng.integers(1, 4))
        inner = [InnerLayerConfig(int(rng.integers(1, 5)), int(rng.integers(1, 4)), 2),
                 InnerLayerConfig(int(rng.integers(1, 4)), int(rng.integers(1, 4)), 3)]
        model = AggregationGNN(gso, node, inner, 4, in_features=g_in, rng_seed=draw)
        _randomize(model, rng)
        x = rng.standard_normal((g_in, n))
        # the k-th shift moves x_{n-k} onto node n, so the node reads x backwards from itself
        rotated = np.array([[x[g, (node - k) % n] for k in range(n)] for g in range(g_in)])
        v = rotated
        for taps, bias, cfg in zip(model.cnn.taps, model.cnn.biases, inner):
            v = oracles.contiguous_cnn_layer(v, taps.data, cfg.pool_factor, bias.data)
        ref = oracles.readout(v, model.readout_weight.data, model.readout_bias.data)
        worst = max(worst, float(np.abs(model(x[None]).data[0] - ref).max()))
    return CheckResult("cyclic aggregation = CNN on rotated input", worst <= 1e-10,
                       f"max abs error {worst:.2e} over {n_draws} draws (bound 1e-10)")


# ---------------------------------------------------------------- filters

def padded_reduced(n_trials: int = 200, seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_trials):
        n = int(rng.integers(2, 21))
        directed = bool(rng.integers(2))
        a = np.where(rng.random((n, n)) < 0.3, rng.standard_normal((n, n)), 0.0)
        np.fill_diagonal(a, 0.0)
        if not directed:
            a = np.triu(a, 1) + np.triu(a, 1).T
        gso = from_dense(a)
        kept = np.sort(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))
        d = np.zeros((kept.size, n))
        d[np.arange(kept.size), kept] = 1.0
        k = int(rng.integers(1, 7))
        g_in, f_out = (int(v) for v in rng.integers(1, 4, 2))
        taps = rng.standard_normal((k, f_out, g_in))
        x = rng.standard_normal((g_in, kept.size))
        reduced = graph_conv_reduced(x, taps, reduced_k_shifts(gso, d, k)).data
        padded = graph_conv_padded(x, taps, gso, d).data
        worst = max(worst, float(np.abs(padded @ d.T - reduced).max() / max(1.0, np.abs(reduced).max())))
    return CheckResult("padded filter selected at D = reduced filter", worst <= 1e-12,
                       f"max error {worst:.2e} over {n_trials} graphs (bound 1e-12, relative to max(1, |output|))")


# ---------------------------------------------------------------- gradients

def _gradient_models(seed: int):
    rng = np.random.default_rng(seed)
    gso = random_connected_graph(rng, 12)
    plan = select_nodes("degree", gso, [6, 3])
    sel = SelectionGNN(gso, plan, [SelectionLayerConfig(3, 4, 6, 2), SelectionLayerConfig(2, 3, 3, 1)],
                       3, rng_seed=seed)
    agg = AggregationGNN(gso, int(plan.nodes(2)[0]),
                         [InnerLayerConfig(3, 4, 2), InnerLayerConfig(2, 3, 2)], 3, rng_seed=seed)
    mn = MultinodeGNN(gso, plan, [OuterLayerConfig(6, 4, (InnerLayerConfig(2, 3, 2), InnerLayerConfig(2, 3, 1))),
                                  OuterLayerConfig(3, 3, (InnerLayerConfig(2, 4, 1),))], 3, rng_seed=seed)
    return gso, {"selection": sel, "aggregation": agg, "multinode": mn}


def gradient_fidelity(seed: int = 3, batch: int = 6) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    gso, models = _gradient_models(seed)
    x = rng.standard_normal((batch, 1, gso.n_nodes))
    labels = rng.integers(0, 3, batch)
    out = []
    for name, model in models.items():
        for p in model.parameters():
            # nonzero biases so every bias gradient is exercised
            p.data += 0.1 * rng.standard_normal(p.data.shape)
        res = gradient_check(lambda m=model: cross_entropy(m(x), labels), model.parameters())
        out.append(CheckResult(f"gradient check ({name})", res.passed and res.n_checked > 0,
                               f"max relative error {res.max_rel_error:.2e} over {res.n_checked} coordinates, "
                               f"{len(res.excluded)} kink-adjacent excluded (bound 1e-4)"))
    return out


# ---------------------------------------------------------------- sampling

def sampling_law(n_graphs: int = 100, seed: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    problems = []
    n_plans = 0
    for trial in range(n_graphs):
        n = int(rng.integers(4, 31))
        gso = random_connected_graph(rng, n, p=float(rng.uniform(0.15, 0.6)), weighted=bool(trial % 2))
        n_layers = int(rng.integers(1, 4))
        counts = sorted((int(v) for v in rng.integers(1, n + 1, n_layers)), reverse=True)
        plans = {name: select_nodes(name, gso, counts) for name in STRATEGIES}
        plans["eds-deflate"] = select_by_eds(gso, counts, deflate=True)
        for name, plan in plans.items():
            n_plans += 1
            prev_d = np.eye(n)
            for layer in range(1, plan.n_layers + 1):
                c = plan.sampling_matrix(layer)
                try:
                    check_sampling_matrix(c)
                except ValueError as exc:
                    problems.append(f"{name} graph {trial} layer {layer}: {exc}")
                if not np.array_equal(c @ c.T, np.eye(c.shape[0])):
                    problems.append(f"{name} graph {trial} layer {layer}: C C^T != I")
                d = nested_sampling(plan, layer)
                if not np.array_equal(d, c @ prev_d):
                    problems.append(f"{name} graph {trial} layer {layer}: D_l != C_l D_(l-1)")
                if layer > 1 and not set(plan.nodes(layer)) <= set(plan.nodes(layer - 1)):
                    problems.append(f"{name} graph {trial} layer {layer}: not nested")
                prev_d = d
    return CheckResult("sampling matrices binary, one-hot rows, nested", not problems,
                       f"{n_plans} plans on {n_graphs} graphs" + (f"; {problems[:3]}" if problems else ""))


def cycle_reduced_structure(sizes=(12, 16, 24, 30), max_power: int = 13) -> CheckResult:
    """On directed cycles with regular sampling each reduced shift is a cycle power or zero."""
    problems = []
    n_checked = 0
    for n in sizes:
        divisors = [c for c in range(n, 0, -1) if n % c == 0]
        for i, first in enumerate(divisors):
            for second in divisors[i:]:
                if first % second:
                    continue
                plan = regular_plan(n, [first, second])
                for layer in (1, 2):
                    prev = plan.layer_sizes[layer - 1]
                    step = n // prev
                    shifts = reduced_k_shifts(directed_cycle(n), plan.nodes(layer - 1), max_power)
                    small = directed_cycle(prev).dense()
                    for k in range(max_power):
                        want = np.linalg.matrix_power(small, k // step) if k % step == 0 else np.zeros((prev, prev))
                        n_checked += 1
                        if not np.array_equal(shifts[k], want):
                            problems.append(f"N={n} plan {first}/{second} layer {layer} k={k}")
    return CheckResult("cycle reduced shifts are cycle powers or zero", not problems,
                       f"{n_checked} matrices compared entrywise" + (f"; {problems[:3]}" if problems else ""))


# ---------------------------------------------------------------- invertibility

def _invertibility_cases(n_graphs: int, seed: int):
    rng = np.random.default_rng(seed)
    cases = []
    while len(cases) < n_graphs:
        n = int(rng.integers(4, 21))
        gso = random_connected_graph(rng, n, p=0.4)
        eig, vecs = np.linalg.eigh(gso.dense())
        if np.min(np.diff(eig)) <= 1e-9:
            continue
        node = int(rng.integers(n))
        x = rng.standard_normal(n)
        z = aggregate_at_node(gso, x[None], node)[0]
        try:
            x_hat = reconstruct_from_aggregate(gso, z, node)
            err = float(np.linalg.norm(x_hat - x) / np.linalg.norm(x))
        except ValueError:
            err = float("inf")
        # a mode that vanishes at the node never reaches it, whatever the spectrum
        observable = bool(np.abs(vecs[node]).min() > 1e-8)
        cases.append((n, err, float(np.linalg.cond(aggregation_matrix(gso, node))), observable))
    return cases


def aggregation_invertibility(n_graphs: int = 50, seed: int = 5) -> CheckResult:
    cases = _invertibility_cases(n_graphs, seed)
    errs = np.array([e for _, e, _, _ in cases])
    bad = [(n, e) for n, e, _, _ in cases if not e < 1e-6]
    return CheckResult("signal recovered from one node's aggregated sequence", not bad,
                       f"max relative error {errs.max():.2e} on {n_graphs} graphs (bound 1e-6); "
                       f"{len(bad)} above bound" + (f", sizes {sorted({n for n, _ in bad})}" if bad else ""))


def aggregation_invertibility_conditioned(n_graphs: int = 50, seed: int = 5) -> CheckResult:
    """Same graphs; error must stay within what the map's condition number allows.

    Nodes where some eigenvector vanishes cannot see that mode at all, so
    they are counted and left out instead of being scored.
    """
    cases = _invertibility_cases(n_graphs, seed)
    eps = np.finfo(np.float64).eps
    seen = [(n, e, c) for n, e, c, ok in cases if ok]
    ratios = [e / (n * c * eps) for n, e, c in seen]
    return CheckResult("reconstruction error within N * cond * eps", bool(seen) and max(ratios) <= 1.0,
                       f"max error / (N cond eps) = {max(ratios):.2e} on {len(seen)} observable cases; "
                       f"condition numbers up to {max(c for _, _, c in seen):.1e}; "
                       f"{len(cases) - len(seen)} unobservable node(s) skipped")


def run_all(quick: bool = False) -> list[CheckResult]:
    scale = 10 if quick else 1
    results = [
        cyclic_selection(100 // scale),
        cyclic_aggregation(100 // scale),
        padded_reduced(200 // scale),
        *gradient_fidelity(),
        sampling_law(100 // scale),
        cycle_reduced_structure(),
        aggregation_invertibility(50 // (5 if quick else 1)),
        aggregation_invertibility_conditioned(50 // (5 if quick else 1)),
    ]
    return results
