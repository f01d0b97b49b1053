import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_dense, scaled
from graphcnn import oracles
from graphcnn.aggregation import (
    AggregationGNN,
    InnerLayerConfig,
    MultinodeGNN,
    OuterLayerConfig,
    aggregate_at_node,
    aggregation_matrix,
    inner_output_length,
    reconstruct_from_aggregate,
    time_conv,
)
from graphcnn.graph import directed_cycle, from_dense
from graphcnn.nn import Tensor, cross_entropy, gradient_check
from graphcnn.sampling import NodeSelectionPlan, select_nodes


def randomize(model, rng):
    for p in model.parameters():
        p.data[...] = rng.standard_normal(p.data.shape)


def test_aggregate_length_one(rng):
    gso = from_dense(random_dense(rng, 6))
    x = rng.standard_normal((2, 6))
    np.testing.assert_array_equal(aggregate_at_node(gso, x, 4, 1), x[:, [4]])


def test_aggregate_on_cycle_reads_backwards():
    x = np.array([10.0, 11.0, 12.0, 13.0])
    for p in range(4):
        want = [x[(p - k) % 4] for k in range(4)]
        np.testing.assert_array_equal(aggregate_at_node(directed_cycle(4), x, p), want)


def test_aggregate_matches_dense_powers(rng):
    a = random_dense(rng, 10, directed=True)
    x = rng.standard_normal((3, 10))
    z = aggregate_at_node(from_dense(a), x, 7)
    for k in range(10):
        np.testing.assert_allclose(z[:, k], (np.linalg.matrix_power(a, k) @ x.T)[7], atol=1e-12)
    np.testing.assert_allclose(aggregation_matrix(from_dense(a), 7), oracles.krylov_observation_matrix(a, 7),
                               atol=1e-12)


def test_aggregate_bounded_by_signal_norm(rng):
    for _ in range(20):
        gso = scaled(random_dense(rng, 15, p=0.5))
        x = rng.standard_normal(15)
        z = aggregate_at_node(gso, x, int(rng.integers(15)), 40)
        assert np.abs(z).max() <= np.linalg.norm(x) + 1e-12


def test_time_conv_examples():
    z = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(time_conv(z, np.ones((1, 1, 1))).data, z)
    np.testing.assert_array_equal(time_conv(z, np.array([0.0, 1.0]).reshape(2, 1, 1)).data, [[0.0, 1.0, 2.0]])


def test_time_conv_rejects_long_taps():
    with pytest.raises(ValueError):
        time_conv(np.ones((1, 2)), np.ones((3, 1, 1)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4), st.integers(0, 2**31), st.floats(-5, 5), st.floats(-5, 5))
def test_time_conv_linear(length, k, seed, a, b):
    k = min(k, length)
    rng = np.random.default_rng(seed)
    taps = rng.standard_normal((k, 2, 3))
    y, w = rng.standard_normal((2, 3, length))
    lhs = time_conv(a * y + b * w, taps).data
    np.testing.assert_allclose(lhs, a * time_conv(y, taps).data + b * time_conv(w, taps).data, atol=1e-12)


def test_time_conv_matches_direct_sum(rng):
    taps, z = rng.standard_normal((3, 2, 2)), rng.standard_normal((2, 6))
    out = time_conv(z, taps).data
    for f in range(2):
        for n in range(6):
            want = sum(taps[k, f, g] * z[g, n - k] for k in range(3) for g in range(2) if n >= k)
            assert abs(out[f, n] - want) <= 1e-12


def test_inner_length_floors():
    assert inner_output_length(7, [InnerLayerConfig(3, 1, 2), InnerLayerConfig(3, 1, 2)]) == 1
    with pytest.raises(ValueError):
        inner_output_length(3, [InnerLayerConfig(1, 1, 2), InnerLayerConfig(1, 1, 2)])


def test_cyclic_aggregation_reduces_to_cnn():
    from graphcnn.selftest import cyclic_aggregation
    res = cyclic_aggregation(n_draws=20, seed=12)
    assert res.passed, res.detail


def test_aggregation_zero_parameters(rng):
    gso = scaled(random_dense(rng, 12))
    model = AggregationGNN(gso, 3, [InnerLayerConfig(3, 4, 2), InnerLayerConfig(2, 3, 2)], 5)
    for p in model.parameters():
        p.data[...] = 0.0
    assert not model(rng.standard_normal((3, 1, 12))).data.any()


def test_aggregation_matches_dense_oracle(rng):
    for trial in range(5):
        gso = scaled(random_dense(rng, 12, directed=bool(trial % 2)) + np.eye(12, k=1))
        inner = [InnerLayerConfig(3, 4, 2), InnerLayerConfig(4, 3, 3)]
        length = (12, 9)[trial % 2]
        model = AggregationGNN(gso, trial, inner, 5, in_features=2, length=length, rng_seed=trial)
        randomize(model, rng)
        x = rng.standard_normal((2, 12))
        ref = oracles.aggregation_dense(gso.dense(), x, trial, length, [t.data for t in model.cnn.taps], [2, 3],
                                        model.readout_weight.data, model.readout_bias.data,
                                        [b.data for b in model.cnn.biases])
        np.testing.assert_allclose(model(x[None]).data[0], ref, atol=1e-12)


def _multinode(gso, plan, shifts, rng_seed=0, share=True, in_features=1):
    outer = [OuterLayerConfig(plan.layer_sizes[1], shifts[0], (InnerLayerConfig(2, 3, 1), InnerLayerConfig(2, 2, 1))),
             OuterLayerConfig(plan.layer_sizes[2], shifts[1], (InnerLayerConfig(2, 3, 2),))]
    return MultinodeGNN(gso, plan, outer, 4, in_features=in_features, share_nodes=share, rng_seed=rng_seed)


@pytest.mark.parametrize("share", [True, False])
def test_multinode_matches_dense_oracle(share, rng):
    for trial in range(4):
        gso = scaled(random_dense(rng, 10, directed=bool(trial % 2)) + np.eye(10, k=1))
        plan = NodeSelectionPlan(10, ([1, 2, 6, 9], [2, 9]))
        model = _multinode(gso, plan, (3, 3), trial, share, in_features=2)
        randomize(model, rng)
        x = rng.standard_normal((2, 10))
        if share:
            taps = [[t.data for t in cnns[0].taps] for cnns in model.cnns]
            biases = [[b.data for b in cnns[0].biases] for cnns in model.cnns]
            ref = oracles.multinode_dense(gso.dense(), x, [list(plan.nodes(1)), list(plan.nodes(2))], [3, 3], taps,
                                          [[1, 1], [2]], model.readout_weight.data, model.readout_bias.data, biases)
            np.testing.assert_allclose(model(x[None]).data[0], ref, atol=1e-12)
        else:
            # each node gets its own inner CNN: swap a node's filters and its output must change
            base = model(x[None]).data
            cnn0, cnn1 = model.cnns[0][0], model.cnns[0][1]
            for a, b in zip(cnn0.taps, cnn1.taps):
                a.data[...], b.data[...] = b.data.copy(), a.data.copy()
            assert not np.allclose(model(x[None]).data, base)
            # with every node holding the same filters the per-node model is the shared one
            shared = _multinode(gso, plan, (3, 3), trial, True, in_features=2)
            state = {}
            for name, value in model.state_dict().items():
                parts = name.split(".")
                if len(parts) > 2 and parts[1].startswith("node"):
                    state[".".join([parts[0]] + parts[2:])] = value
                    continue
                state[name] = value
            shared.load_state_dict(state)
            for r, cnns in enumerate(model.cnns):
                for cnn in cnns:
                    for mine, ref in zip(cnn.taps + cnn.biases, shared.cnns[r][0].taps + shared.cnns[r][0].biases):
                        mine.data[...] = ref.data
            np.testing.assert_allclose(model(x[None]).data, shared(x[None]).data, atol=1e-12)


def test_single_outer_layer_is_aggregation(rng):
    gso = scaled(random_dense(rng, 12))
    inner = (InnerLayerConfig(3, 4, 2), InnerLayerConfig(2, 3, 2))
    mn = MultinodeGNN(gso, NodeSelectionPlan(12, ([5],)), [OuterLayerConfig(1, 12, inner)], 4, rng_seed=1)
    agg = AggregationGNN(gso, 5, inner, 4, rng_seed=1)
    randomize(mn, rng)
    agg.load_state_dict({k.removeprefix("outer1."): v for k, v in mn.state_dict().items()})
    x = rng.standard_normal((6, 1, 12))
    np.testing.assert_allclose(mn(x).data, agg(x).data, atol=1e-12)


def test_multinode_zero_input_zero_logits(rng):
    gso = scaled(random_dense(rng, 10))
    model = _multinode(gso, select_nodes("sp", gso, [4, 2]), (3, 3))
    assert not model(np.zeros((2, 1, 10))).data.any()


def test_multinode_node_order_permutes_features(rng):
    gso = scaled(random_dense(rng, 10))
    inner = (InnerLayerConfig(2, 3, 2),)
    order = [2, 5, 7, 9]
    perm = [3, 0, 2, 1]
    a = MultinodeGNN(gso, NodeSelectionPlan(10, (order,)), [OuterLayerConfig(4, 4, inner)], 3, rng_seed=0)
    b = MultinodeGNN(gso, NodeSelectionPlan(10, ([order[i] for i in perm],)), [OuterLayerConfig(4, 4, inner)], 3,
                     rng_seed=0)
    randomize(a, rng)
    b.load_state_dict(a.state_dict())
    x = rng.standard_normal((3, 1, 10))
    fa = a.features(Tensor(a.prepare(x))).data
    fb = b.features(Tensor(b.prepare(x))).data
    np.testing.assert_allclose(fb, fa[:, :, perm], atol=1e-12)


def test_plan_and_layers_must_agree(rng):
    gso = scaled(random_dense(rng, 10))
    with pytest.raises(ValueError):
        MultinodeGNN(gso, NodeSelectionPlan(10, ([0, 1, 2],)),
                     [OuterLayerConfig(3, 3, (InnerLayerConfig(1, 1),)), OuterLayerConfig(1, 3, (InnerLayerConfig(1, 1),))], 2)
    with pytest.raises(ValueError):
        MultinodeGNN(gso, NodeSelectionPlan(10, ([0, 1, 2],)), [OuterLayerConfig(2, 3, (InnerLayerConfig(1, 1),))], 2)


def test_long_taps_meet_zero_border(rng):
    # three taps on a two-sample sequence: the third tap never touches data
    gso = scaled(random_dense(rng, 8))
    inner = (InnerLayerConfig(3, 2, 1),)
    model = MultinodeGNN(gso, NodeSelectionPlan(8, ([0, 3],)), [OuterLayerConfig(2, 2, inner)], 2)
    randomize(model, rng)
    x = rng.standard_normal((2, 1, 8))
    before = model(x).data
    model.cnns[0][0].taps[0].data[2] += 5.0
    np.testing.assert_array_equal(model(x).data, before)


@pytest.mark.parametrize("arch", ["aggregation", "multinode"])
def test_gradient_check(arch, rng):
    gso = scaled(random_dense(rng, 12) + np.eye(12, k=1) + np.eye(12, k=-1))
    if arch == "aggregation":
        model = AggregationGNN(gso, 0, [InnerLayerConfig(3, 4, 2), InnerLayerConfig(2, 3, 2)], 3)
    else:
        model = _multinode(gso, select_nodes("sp", gso, [6, 3]), (4, 3))
    for p in model.parameters():
        p.data += 0.1 * rng.standard_normal(p.data.shape)
    x, y = rng.standard_normal((5, 1, 12)), rng.integers(0, 3, 5)
    res = gradient_check(lambda: cross_entropy(model(x), y), model.parameters())
    assert res.passed and res.n_checked > 0, res


def test_reconstruct_well_conditioned(rng):
    # a chord-free directed cycle gives a permutation observation map
    gso = directed_cycle(9)
    x = rng.standard_normal(9)
    np.testing.assert_allclose(reconstruct_from_aggregate(gso, aggregate_at_node(gso, x, 4), 4), x, atol=1e-12)


def test_reconstruct_singular_reports():
    a = np.ones((4, 4)) - np.eye(4)
    with pytest.raises(ValueError):
        reconstruct_from_aggregate(from_dense(a), np.arange(4.0), 0)


def test_reconstruct_error_tracks_conditioning():
    from graphcnn.selftest import aggregation_invertibility_conditioned
    res = aggregation_invertibility_conditioned(n_graphs=20, seed=9)
    assert res.passed, res.detail
