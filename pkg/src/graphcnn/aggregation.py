"""Aggregation graph neural networks.

A node collects ``[x_p, (Sx)_p, (S^2 x)_p, ...]``, a sequence with a regular
time structure, and an ordinary 1-D CNN runs on it.  The multinode variant
does this at a set of nodes per outer layer, shares the inner CNN across
them and uses the stacked outputs as the next graph signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from graphcnn.graph import GraphShiftOperator, shift_sequence
from graphcnn.nn import functional as fn
from graphcnn.nn.module import Module, uniform_init
from graphcnn.nn.tensor import Tensor, as_tensor
from graphcnn.sampling import NodeSelectionPlan, gather_shifts


@dataclass(frozen=True)
class InnerLayerConfig:
    n_taps: int
    out_features: int
    pool_factor: int = 1
    bias: bool = True

    def __post_init__(self):
        for name in ("n_taps", "out_features", "pool_factor"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


def _inner_configs(layers) -> list[InnerLayerConfig]:
    out = [l if isinstance(l, InnerLayerConfig) else InnerLayerConfig(**l) for l in layers]
    if not out:
        raise ValueError("need at least one inner layer")
    return out


def inner_output_length(length: int, layers) -> int:
    """Sequence length after the inner CNN; raises if pooling empties it."""
    for l, cfg in enumerate(_inner_configs(layers)):
        length //= cfg.pool_factor
        if length < 1:
            raise ValueError(f"inner layer {l} pools a sequence away completely")
    return length


def aggregate_at_node(gso: GraphShiftOperator, x, node: int, length: int | None = None) -> np.ndarray:
    """``z[..., g, k] = (S^k x^g)_node`` for ``k < length`` (default ``N``)."""
    x = np.asarray(x, dtype=np.float64)
    length = gso.n_nodes if length is None else length
    if not 0 <= node < gso.n_nodes:
        raise ValueError(f"node {node} out of range for {gso.n_nodes} nodes")
    seq = shift_sequence(gso, x, length)
    return np.stack([s[..., node] for s in seq], axis=-1)


def reconstruct_from_aggregate(gso: GraphShiftOperator, z, node: int) -> np.ndarray:
    """Recover ``x`` from its full-length aggregated sequence at ``node``.

    Solves ``V x = z`` with ``V[k, j] = (S^k)_{node, j}``.  This needs ``V``
    to be nonsingular, and the forward error grows with its condition number.
    """
    n = gso.n_nodes
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != n:
        raise ValueError(f"need {n} aggregated samples, got {z.shape[-1]}")
    v = aggregation_matrix(gso, node)
    try:
        x = np.linalg.solve(v, z.reshape(-1, n).T).T
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"the aggregation map at node {node} is singular") from exc
    return x.reshape(z.shape)


def aggregation_matrix(gso: GraphShiftOperator, node: int) -> np.ndarray:
    """``V`` with ``V[k, j] = (S^k)_{node, j}``, so ``z = V x``."""
    return aggregate_at_node(gso, np.eye(gso.n_nodes), node, gso.n_nodes).T


def time_conv(z, taps, bias=None) -> Tensor:
    """Causal convolution ``u[f, n] = sum_{k, g} h[k, f, g] z[g, n - k] (+ b^f)``, length kept."""
    z = as_tensor(z)
    squeezed = z.ndim == 2
    if squeezed:
        z = fn.reshape(z, (1,) + z.shape)
    taps = as_tensor(taps)
    if taps.ndim != 3 or taps.shape[2] != z.shape[1]:
        raise ValueError(f"taps {taps.shape} do not fit {z.shape[1]} input features")
    if taps.shape[0] > z.shape[-1]:
        raise ValueError(f"{taps.shape[0]} taps exceed sequence length {z.shape[-1]}")
    out = fn.tap_mix(fn.time_shift_stack(z, taps.shape[0]), taps)
    if bias is not None:
        out = fn.bias_add(out, bias)
    return fn.reshape(out, out.shape[1:]) if squeezed else out


class InnerCNN:
    """Time convolution, contiguous max-pool and ReLU, layer after layer."""

    def __init__(self, owner: Module, prefix: str, layers, in_features: int, length: int,
                 rng: np.random.Generator):
        self.layers = _inner_configs(layers)
        self.in_length = length
        self.out_length = inner_output_length(length, self.layers)
        self.taps, self.biases, self.pool_tables = [], [], []
        f_in = in_features
        for l, cfg in enumerate(self.layers, start=1):
            shape = (cfg.n_taps, cfg.out_features, f_in)
            self.taps.append(owner.add_parameter(f"{prefix}layer{l}.taps",
                                                 uniform_init(rng, shape, cfg.n_taps * f_in)))
            self.biases.append(owner.add_parameter(f"{prefix}layer{l}.bias", np.zeros(cfg.out_features))
                               if cfg.bias else None)
            self.pool_tables.append(fn.pad_groups(fn.contiguous_groups(length, cfg.pool_factor), length))
            length //= cfg.pool_factor
            f_in = cfg.out_features
        self.out_features = f_in

    def __call__(self, z: Tensor) -> Tensor:
        for taps, bias, table in zip(self.taps, self.biases, self.pool_tables):
            # taps longer than the sequence only ever meet the zero border
            u = fn.tap_mix(fn.time_shift_stack(z, taps.shape[0]), taps)
            if bias is not None:
                u = fn.bias_add(u, bias)
            z = fn.relu(fn.max_pool_groups(u, table))
        return z


class AggregationGNN(Module):
    """Single-node aggregation followed by a CNN and a linear readout."""

    def __init__(self, gso: GraphShiftOperator, node: int, inner_layers, n_classes: int,
                 in_features: int = 1, length: int | None = None, rng_seed: int = 0):
        super().__init__()
        self.gso, self.node, self.n_classes, self.in_features = gso, int(node), n_classes, in_features
        self.length = gso.n_nodes if length is None else int(length)
        if not 0 <= self.node < gso.n_nodes:
            raise ValueError(f"node {node} out of range for {gso.n_nodes} nodes")
        rng = np.random.default_rng(rng_seed)
        self.cnn = InnerCNN(self, "", inner_layers, in_features, self.length, rng)
        width = self.cnn.out_features * self.cnn.out_length
        self.readout_weight = self.add_parameter("readout.weight", uniform_init(rng, (n_classes, width), width))
        self.readout_bias = self.add_parameter("readout.bias", np.zeros(n_classes))

    def prepare(self, signals) -> np.ndarray:
        signals = np.asarray(signals, dtype=np.float64)
        if signals.ndim != 3 or signals.shape[1:] != (self.in_features, self.gso.n_nodes):
            raise ValueError(f"expected (B, {self.in_features}, {self.gso.n_nodes}) input, got {signals.shape}")
        return aggregate_at_node(self.gso, signals, self.node, self.length)

    def forward_prepared(self, z: Tensor) -> Tensor:
        if z.ndim != 3 or z.shape[1:] != (self.in_features, self.length):
            raise ValueError(f"expected aggregated (B, {self.in_features}, {self.length}), got {z.shape}")
        h = self.cnn(z)
        return fn.linear(fn.reshape(h, (h.shape[0], -1)), self.readout_weight, self.readout_bias)


@dataclass(frozen=True)
class OuterLayerConfig:
    n_nodes: int
    n_shifts: int
    inner_layers: tuple

    def __post_init__(self):
        if self.n_nodes < 1 or self.n_shifts < 1:
            raise ValueError("outer layers need positive n_nodes and n_shifts")
        object.__setattr__(self, "inner_layers", tuple(_inner_configs(self.inner_layers)))


class MultinodeGNN(Module):
    """Outer layers aggregate at the nodes of ``plan`` and run inner CNNs there.

    Outer layer ``r`` reads the previous layer's features on nodes
    ``plan.nodes(r-1)``, builds ``n_shifts`` shifted copies seen at
    ``plan.nodes(r)`` and applies the inner CNN per node.  With
    ``share_nodes`` the inner CNN is shared by every node of the layer.
    """

    def __init__(self, gso: GraphShiftOperator, plan: NodeSelectionPlan, outer_layers, n_classes: int,
                 in_features: int = 1, share_nodes: bool = True, rng_seed: int = 0):
        super().__init__()
        outer = [o if isinstance(o, OuterLayerConfig) else OuterLayerConfig(**o) for o in outer_layers]
        if plan.n_nodes != gso.n_nodes:
            raise ValueError(f"plan covers {plan.n_nodes} nodes, graph has {gso.n_nodes}")
        if plan.n_layers != len(outer):
            raise ValueError(f"plan has {plan.n_layers} layers, model has {len(outer)} outer layers")
        for r, cfg in enumerate(outer, start=1):
            if plan.layer_sizes[r] != cfg.n_nodes:
                raise ValueError(f"outer layer {r} uses {cfg.n_nodes} nodes, plan keeps {plan.layer_sizes[r]}")
        self.gso, self.plan, self.outer = gso, plan, outer
        self.n_classes, self.in_features, self.share_nodes = n_classes, in_features, share_nodes
        rng = np.random.default_rng(rng_seed)
        self.gathers, self.cnns = [], []
        f_in = in_features
        for r, cfg in enumerate(outer, start=1):
            self.gathers.append(gather_shifts(gso, plan.nodes(r - 1), plan.nodes(r), cfg.n_shifts))
            if share_nodes:
                cnns = [InnerCNN(self, f"outer{r}.", cfg.inner_layers, f_in, cfg.n_shifts, rng)]
            else:
                cnns = [InnerCNN(self, f"outer{r}.node{i}.", cfg.inner_layers, f_in, cfg.n_shifts, rng)
                        for i in range(cfg.n_nodes)]
            self.cnns.append(cnns)
            f_in = cnns[0].out_features * cnns[0].out_length
        width = f_in * outer[-1].n_nodes
        self.readout_weight = self.add_parameter("readout.weight", uniform_init(rng, (n_classes, width), width))
        self.readout_bias = self.add_parameter("readout.bias", np.zeros(n_classes))

    def prepare(self, signals) -> np.ndarray:
        signals = np.asarray(signals, dtype=np.float64)
        if signals.ndim != 3 or signals.shape[1:] != (self.in_features, self.gso.n_nodes):
            raise ValueError(f"expected (B, {self.in_features}, {self.gso.n_nodes}) input, got {signals.shape}")
        return fn.shift_stack(signals, self.gathers[0]).data

    def _outer(self, r: int, z: Tensor) -> Tensor:
        # z: (B, Q, G, P) -> (B, F*T', P)
        bsz, q, g, p = z.shape
        z = fn.transpose(z, (0, 3, 2, 1))                        # (B, P, G, Q)
        cnns = self.cnns[r]
        if self.share_nodes:
            h = cnns[0](fn.reshape(z, (bsz * p, g, q)))
            h = fn.reshape(h, (bsz, p, -1))
            return fn.transpose(h, (0, 2, 1))
        outs = []
        for i, cnn in enumerate(cnns):
            h = cnn(fn.reshape(fn.take(z, [i], axis=1), (bsz, g, q)))
            outs.append(fn.reshape(h, (bsz, -1)))
        return fn.stack(outs, axis=2)

    def features(self, z: Tensor) -> Tensor:
        """Last outer layer output ``(B, F*T', P_R)`` from the gathered input."""
        first = self.outer[0]
        expected = (first.n_shifts, self.in_features, first.n_nodes)
        if z.ndim != 4 or z.shape[1:] != expected:
            raise ValueError(f"expected gathered (B, {', '.join(map(str, expected))}), got {z.shape}")
        x = self._outer(0, z)
        for r in range(1, len(self.outer)):
            x = self._outer(r, fn.shift_stack(x, self.gathers[r]))
        return x

    def forward_prepared(self, z: Tensor) -> Tensor:
        x = self.features(z)
        return fn.linear(fn.reshape(x, (x.shape[0], -1)), self.readout_weight, self.readout_bias)
