"""Selection graph neural networks.

Each layer filters its input with polynomial taps in the reduced k-shift
matrices of the currently active nodes, max-pools every retained node over
its graph neighbourhood, keeps the retained nodes and applies a ReLU.  A
fully connected readout maps the flattened last feature map to class logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from graphcnn.graph import GraphShiftOperator
from graphcnn.nn import functional as fn
from graphcnn.nn.module import Module, uniform_init
from graphcnn.nn.tensor import Tensor, as_tensor
from graphcnn.sampling import (
    NodeSelectionPlan,
    ReducedShiftSet,
    check_sampling_matrix,
    graph_neighborhood,
    reduced_k_shifts,
    selector_indices,
)


@dataclass(frozen=True)
class SelectionLayerConfig:
    n_taps: int
    out_features: int
    n_nodes_out: int
    pool_reach: int
    pool_threshold: float = 0.0
    # optional tap tying: tap k uses trainable coefficient tap_groups[k]
    tap_groups: tuple | None = None
    bias: bool = True

    def __post_init__(self):
        for name in ("n_taps", "out_features", "n_nodes_out"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.pool_reach < 0:
            raise ValueError(f"pool_reach must be nonnegative, got {self.pool_reach}")
        if self.pool_threshold < 0:
            raise ValueError(f"pool_threshold must be nonnegative, got {self.pool_threshold}")
        if self.tap_groups is not None:
            groups = tuple(int(g) for g in self.tap_groups)
            if len(groups) != self.n_taps:
                raise ValueError(f"tap_groups has {len(groups)} entries for {self.n_taps} taps")
            if sorted(set(groups)) != list(range(max(groups) + 1)):
                raise ValueError("tap_groups must use every id in 0..max")
            object.__setattr__(self, "tap_groups", groups)

    @property
    def shift_order(self) -> int:
        """Shift powers needed by both the filter and the pooling reach."""
        return max(self.n_taps, self.pool_reach + 1)

    @property
    def n_tap_params(self) -> int:
        return self.n_taps if self.tap_groups is None else max(self.tap_groups) + 1


def _batched(x):
    x = as_tensor(x)
    if x.ndim == 2:
        return fn.reshape(x, (1,) + x.shape), True
    return x, False


def _unbatch(out: Tensor, squeezed: bool) -> Tensor:
    return fn.reshape(out, out.shape[1:]) if squeezed else out


def _mix(z, taps, bias) -> Tensor:
    u = fn.tap_mix(z, taps)
    return u if bias is None else fn.bias_add(u, bias)


def graph_conv_reduced(x, taps, shifts: ReducedShiftSet, bias=None) -> Tensor:
    """``u^f = sum_g sum_k h[k, f, g] S^(k) x^g (+ b^f)`` on the active nodes."""
    x, squeezed = _batched(x)
    taps = as_tensor(taps)
    k = taps.shape[0]
    if k > shifts.order:
        raise ValueError(f"{k} taps need {k} shift powers, only {shifts.order} available")
    z = fn.shift_stack(x, shifts.matrices[:k])
    return _unbatch(_mix(z, taps, bias), squeezed)


def graph_conv_padded(x, taps, gso: GraphShiftOperator, d, bias=None) -> Tensor:
    """Zero-pad onto the full graph with ``D^T`` and filter with sparse shifts.

    The output lives on all ``N`` nodes; selecting the rows of ``D`` recovers
    :func:`graph_conv_reduced`.
    """
    x, squeezed = _batched(x)
    taps = as_tensor(taps)
    nodes = selector_indices(d)
    if x.shape[-1] != nodes.size:
        raise ValueError(f"signal has {x.shape[-1]} nodes, selection keeps {nodes.size}")
    z = fn.sparse_shift_stack(x, gso.matrix, nodes, taps.shape[0])
    return _unbatch(_mix(z, taps, bias), squeezed)


def pooling_groups(shifts: ReducedShiftSet, rows, reach: int, threshold: float) -> list[list[int]]:
    return [graph_neighborhood(shifts, int(r), reach, threshold) for r in rows]


def graph_pool(u, shifts: ReducedShiftSet, c, reach: int, threshold: float = 0.0) -> Tensor:
    """Neighbourhood max at the nodes kept by ``C``, then ReLU."""
    u, squeezed = _batched(u)
    c = np.asarray(c)
    check_sampling_matrix(c)
    if c.shape[1] != u.shape[-1]:
        raise ValueError(f"sampling matrix has {c.shape[1]} columns for {u.shape[-1]} nodes")
    groups = pooling_groups(shifts, selector_indices(c), reach, threshold)
    return _unbatch(fn.relu(fn.max_pool_groups(u, groups)), squeezed)


class SelectionGNN(Module):
    """Stack of selection layers over ``plan`` followed by a linear readout.

    ``conv_mode="reduced"`` filters with the cached dense reduced shifts;
    ``"padded"`` zero-pads and runs sparse shifts on the original graph, which
    scales with the edge count instead of the square of the active nodes.
    """

    def __init__(self, gso: GraphShiftOperator, plan: NodeSelectionPlan, layers, n_classes: int,
                 in_features: int = 1, rng_seed: int = 0, conv_mode: str = "reduced"):
        super().__init__()
        layers = [l if isinstance(l, SelectionLayerConfig) else SelectionLayerConfig(**l) for l in layers]
        if plan.n_nodes != gso.n_nodes:
            raise ValueError(f"plan covers {plan.n_nodes} nodes, graph has {gso.n_nodes}")
        if plan.n_layers != len(layers):
            raise ValueError(f"plan has {plan.n_layers} layers, model has {len(layers)}")
        for l, cfg in enumerate(layers, start=1):
            if plan.layer_sizes[l] != cfg.n_nodes_out:
                raise ValueError(f"layer {l} keeps {cfg.n_nodes_out} nodes, plan keeps {plan.layer_sizes[l]}")
        if conv_mode not in ("reduced", "padded"):
            raise ValueError(f"unknown conv_mode {conv_mode!r}")
        self.gso, self.plan, self.layers = gso, plan, layers
        self.n_classes, self.in_features, self.conv_mode = n_classes, in_features, conv_mode
        rng = np.random.default_rng(rng_seed)
        self.shifts, self.pool_tables, self.taps, self.biases = [], [], [], []
        f_in = in_features
        for l, cfg in enumerate(layers, start=1):
            shifts = reduced_k_shifts(gso, plan.nodes(l - 1), cfg.shift_order)
            groups = pooling_groups(shifts, plan.positions(l), cfg.pool_reach, cfg.pool_threshold)
            self.shifts.append(shifts)
            self.pool_tables.append(fn.pad_groups(groups, shifts.n_nodes))
            shape = (cfg.n_tap_params, cfg.out_features, f_in)
            self.taps.append(self.add_parameter(f"layer{l}.taps", uniform_init(rng, shape, cfg.n_taps * f_in)))
            self.biases.append(self.add_parameter(f"layer{l}.bias", np.zeros(cfg.out_features)) if cfg.bias else None)
            f_in = cfg.out_features
        width = f_in * layers[-1].n_nodes_out
        self.readout_weight = self.add_parameter("readout.weight", uniform_init(rng, (n_classes, width), width))
        self.readout_bias = self.add_parameter("readout.bias", np.zeros(n_classes))

    def layer_taps(self, l: int) -> Tensor:
        cfg, taps = self.layers[l], self.taps[l]
        return taps if cfg.tap_groups is None else fn.take(taps, cfg.tap_groups, axis=0)

    def features(self, x: Tensor) -> Tensor:
        """Output of the last selection layer, shape ``(B, F_L, N_L)``."""
        for l, cfg in enumerate(self.layers):
            taps = self.layer_taps(l)
            if self.conv_mode == "reduced":
                z = fn.shift_stack(x, self.shifts[l].matrices[:cfg.n_taps])
            else:
                nodes = self.shifts[l].nodes
                z = fn.take(fn.sparse_shift_stack(x, self.gso.matrix, nodes, cfg.n_taps), nodes, axis=3)
            u = _mix(z, taps, self.biases[l])
            x = fn.relu(fn.max_pool_groups(u, self.pool_tables[l]))
        return x

    def forward_prepared(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[1] != self.in_features or x.shape[2] != self.gso.n_nodes:
            raise ValueError(f"expected (B, {self.in_features}, {self.gso.n_nodes}) input, got {x.shape}")
        h = self.features(x)
        flat = fn.reshape(h, (h.shape[0], -1))
        return fn.linear(flat, self.readout_weight, self.readout_bias)
