"""Straight-line reference implementations used to cross-check the models.

Everything here is written with explicit loops and dense matrix powers and
shares no code with the layer implementations, so agreement between the two
is evidence that both are right.
"""

from __future__ import annotations

import numpy as np


def dense_powers(s: np.ndarray, count: int) -> list[np.ndarray]:
    out = [np.eye(s.shape[0])]
    for _ in range(count - 1):
        out.append(out[-1] @ s)
    return out


def conventional_cnn_layer(x: np.ndarray, taps: np.ndarray, window: int, stride: int,
                           circular: bool, bias=None) -> np.ndarray:
    """One CNN layer on a ``(G, T)`` sequence.

    ``u[f, n] = sum_{k, g} taps[k, f, g] x[g, n - k]`` with circular or
    zero-filled indices, then ``v[f, j] = relu(max_{o <= window} u[f, j*stride - o])``.
    Windows look backwards from each kept sample; with a zero border a window
    never reaches before index 0.
    """
    n_taps, f_out, g_in = taps.shape
    length = x.shape[1]
    u = np.zeros((f_out, length))
    for f in range(f_out):
        for n in range(length):
            acc = 0.0
            for k in range(n_taps):
                src = n - k
                if circular:
                    src %= length
                elif src < 0:
                    continue
                for g in range(g_in):
                    acc += taps[k, f, g] * x[g, src]
            u[f, n] = acc + (0.0 if bias is None else bias[f])
    n_out = length // stride
    v = np.zeros((f_out, n_out))
    for f in range(f_out):
        for j in range(n_out):
            best = -np.inf
            for o in range(window + 1):
                m = j * stride - o
                if circular:
                    m %= length
                elif m < 0:
                    continue
                best = max(best, u[f, m])
            v[f, j] = max(best, 0.0)
    return v


def contiguous_cnn_layer(x: np.ndarray, taps: np.ndarray, pool: int, bias=None) -> np.ndarray:
    """Zero-border causal convolution, max over blocks ``[j*pool, (j+1)*pool)``, ReLU."""
    n_taps, f_out, g_in = taps.shape
    length = x.shape[1]
    u = np.zeros((f_out, length))
    for f in range(f_out):
        for n in range(length):
            u[f, n] = sum(taps[k, f, g] * x[g, n - k]
                          for k in range(n_taps) if n - k >= 0 for g in range(g_in))
            if bias is not None:
                u[f, n] += bias[f]
    n_out = length // pool
    v = np.empty((f_out, n_out))
    for f in range(f_out):
        for j in range(n_out):
            v[f, j] = max(0.0, max(u[f, j * pool + i] for i in range(pool)))
    return v


def readout(h: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return weight @ h.reshape(-1) + bias


def selection_dense(s: np.ndarray, x: np.ndarray, layer_nodes: list, taps: list, reaches: list,
                    weight: np.ndarray, bias: np.ndarray, threshold: float = 0.0,
                    layer_biases: list | None = None) -> np.ndarray:
    """Selection GNN logits for one ``(G, N)`` signal from dense powers of ``s``.

    ``layer_nodes[l]`` lists the original indices kept after layer ``l`` (in
    order), ``taps[l]`` is ``(K, F, G)``.
    """
    n = s.shape[0]
    active = list(range(n))
    h = x
    layer_biases = layer_biases or [None] * len(taps)
    for nodes, h_taps, alpha, b in zip(layer_nodes, taps, reaches, layer_biases):
        n_taps = h_taps.shape[0]
        d = np.zeros((len(active), n))
        for i, v in enumerate(active):
            d[i, v] = 1.0
        reduced = [d @ p @ d.T for p in dense_powers(s, max(n_taps, alpha + 1))]
        f_out = h_taps.shape[1]
        u = np.zeros((f_out, len(active)))
        for f in range(f_out):
            for g in range(h.shape[0]):
                for k in range(n_taps):
                    u[f] += h_taps[k, f, g] * (reduced[k] @ h[g])
            if b is not None:
                u[f] += b[f]
        out = np.zeros((f_out, len(nodes)))
        for j, node in enumerate(nodes):
            row = active.index(node)
            hood = [m for m in range(len(active))
                    if any(abs(reduced[k][row, m]) > threshold for k in range(alpha + 1))]
            for f in range(f_out):
                out[f, j] = max(0.0, max(u[f, m] for m in hood))
        h = out
        active = list(nodes)
    return readout(h, weight, bias)


def aggregation_dense(s: np.ndarray, x: np.ndarray, node: int, length: int, taps: list, pools: list,
                      weight: np.ndarray, bias: np.ndarray, layer_biases: list | None = None) -> np.ndarray:
    powers = dense_powers(s, length)
    z = np.array([[powers[k][node] @ x[g] for k in range(length)] for g in range(x.shape[0])])
    for h_taps, pool, b in zip(taps, pools, layer_biases or [None] * len(taps)):
        z = contiguous_cnn_layer(z, h_taps, pool, b)
    return readout(z, weight, bias)


def multinode_dense(s: np.ndarray, x: np.ndarray, layer_nodes: list, shifts: list, inner_taps: list,
                    inner_pools: list, weight: np.ndarray, bias: np.ndarray,
                    inner_biases: list | None = None) -> np.ndarray:
    """Multinode logits following the outer-layer recipe step by step.

    Each outer layer zero-pads the previous features onto the whole graph,
    diffuses them ``Q_r - 1`` times, reads the sequence at every node it
    keeps, and runs the inner CNN of that layer on each sequence.
    """
    n = s.shape[0]
    padded = x                                   # (G, N) on the full graph
    stacked = None
    inner_biases = inner_biases or [[None] * len(t) for t in inner_taps]
    for nodes, q, taps, pools, biases in zip(layer_nodes, shifts, inner_taps, inner_pools, inner_biases):
        powers = dense_powers(s, q)
        per_node = []
        for p in nodes:
            z = np.array([[powers[k][p] @ padded[g] for k in range(q)] for g in range(padded.shape[0])])
            for h_taps, pool, b in zip(taps, pools, biases):
                z = contiguous_cnn_layer(z, h_taps, pool, b)
            per_node.append(z.reshape(-1))
        stacked = np.array(per_node).T           # (features, P_r)
        padded = np.zeros((stacked.shape[0], n))
        for i, p in enumerate(nodes):
            padded[:, p] = stacked[:, i]
    return readout(stacked, weight, bias)


def krylov_observation_matrix(s: np.ndarray, node: int) -> np.ndarray:
    """Rows ``e_node^T S^k`` for ``k < N``; maps a signal to its aggregated sequence."""
    return np.array([p[node] for p in dense_powers(s, s.shape[0])])
