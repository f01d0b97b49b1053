"""Graph shift operators and the synthetic graphs/signals built on them.

Shift convention: the entry ``[S]_{dst, src}`` holds the weight of the edge
``src -> dst``, so ``S @ x`` aggregates the in-neighbours of every node.  On
the directed cycle built from edges ``n -> n+1`` this gives ``(Sx)_{n+1} = x_n``,
a circular time shift.

Signals are dense arrays of shape ``(F, N)`` (features by nodes); batches of
signals carry a leading sample axis, ``(M, F, N)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from graphcnn.data import LabeledDataset


class GraphError(ValueError):
    """Raised for malformed graphs or graph/signal mismatches."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative spectral routine fails to converge."""


class Variant(str, enum.Enum):
    RAW_ADJACENCY = "raw_adjacency"
    SCALED_ADJACENCY = "scaled_adjacency"
    NORMALIZED_LAPLACIAN = "normalized_laplacian"

    @property
    def is_laplacian(self) -> bool:
        return self is Variant.NORMALIZED_LAPLACIAN


SYMMETRY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class GraphShiftOperator:
    """Sparse N x N shift operator together with the variant it represents."""

    matrix: sp.csr_matrix
    variant: Variant = Variant.RAW_ADJACENCY

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise GraphError(f"shift operator must be square and nonempty, got {m.shape}")
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        if not np.all(np.isfinite(m.data)):
            raise GraphError("shift operator has non-finite entries")
        for arr in (m.data, m.indices, m.indptr):
            arr.flags.writeable = False
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.variant is Variant.NORMALIZED_LAPLACIAN and self.directed:
            raise GraphError("normalized Laplacian must be symmetric")

    @property
    def n_nodes(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def directed(self) -> bool:
        diff = self.matrix - self.matrix.T
        return bool(diff.nnz) and float(abs(diff).max()) > SYMMETRY_TOL

    @property
    def n_edges(self) -> int:
        return self.matrix.nnz

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def __repr__(self):
        kind = "directed" if self.directed else "undirected"
        return (f"GraphShiftOperator(n_nodes={self.n_nodes}, nnz={self.n_edges}, "
                f"variant={self.variant.value}, {kind})")


def from_edge_list(edges: Iterable[Sequence[float]], n_nodes: int,
                   symmetrize: bool = False) -> GraphShiftOperator:
    """Build a raw adjacency operator from ``(src, dst, weight)`` triples.

    The weight of ``src -> dst`` lands at ``[A]_{dst, src}``.  With
    ``symmetrize`` the result is ``(A + A^T) / 2``.  Duplicate ``(src, dst)``
    pairs are rejected instead of summed.
    """
    if n_nodes < 1:
        raise GraphError(f"n_nodes must be positive, got {n_nodes}")
    rows, cols, vals = [], [], []
    seen = set()
    for edge in edges:
        src, dst, weight = edge
        src, dst, weight = int(src), int(dst), float(weight)
        if not (0 <= src < n_nodes and 0 <= dst < n_nodes):
            raise GraphError(f"edge ({src}, {dst}) out of range for {n_nodes} nodes")
        if not np.isfinite(weight):
            raise GraphError(f"edge ({src}, {dst}) has non-finite weight {weight}")
        if (src, dst) in seen:
            raise GraphError(f"duplicate edge ({src}, {dst})")
        seen.add((src, dst))
        rows.append(dst)
        cols.append(src)
        vals.append(weight)
    adj = sp.csr_matrix((vals, (rows, cols)), shape=(n_nodes, n_nodes), dtype=np.float64)
    if symmetrize:
        adj = (adj + adj.T) * 0.5
    return GraphShiftOperator(adj, Variant.RAW_ADJACENCY)


def from_dense(matrix: np.ndarray, variant: Variant = Variant.RAW_ADJACENCY) -> GraphShiftOperator:
    return GraphShiftOperator(sp.csr_matrix(np.asarray(matrix, dtype=np.float64)), variant)


def directed_cycle(n_nodes: int) -> GraphShiftOperator:
    """Adjacency of the directed cycle with edges ``n -> n+1 (mod N)``."""
    return from_edge_list([(n, (n + 1) % n_nodes, 1.0) for n in range(n_nodes)], n_nodes)


def power_iteration(matrix, tol: float = 1e-9, max_iter: int = 10_000) -> float:
    """Largest eigenvalue modulus of ``matrix`` by normalized power iteration.

    The estimate is the norm growth ``||S x|| / ||x||``, which is exact in one
    step for permutation-like operators and settles on ``rho`` when the
    dominant eigenvalues share a modulus (e.g. bipartite graphs).
    """
    n = matrix.shape[0]
    idx = np.arange(n)
    x = 1.0 + 1e-3 * ((idx * 7919) % 101) / 101.0
    x /= np.linalg.norm(x)
    prev = None
    for _ in range(max_iter):
        y = matrix @ x
        est = float(np.linalg.norm(y))
        if est == 0.0:
            # x fell into the null space; nilpotent parts only
            return 0.0
        if prev is not None and abs(est - prev) <= tol * est:
            return est
        prev = est
        x = y / est
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


def scale_by_spectral_radius(gso: GraphShiftOperator) -> GraphShiftOperator:
    """Return ``S / lambda_max`` with ``lambda_max`` from power iteration."""
    if gso.n_edges == 0:
        raise GraphError("cannot scale an all-zero shift operator")
    radius = power_iteration(gso.matrix)
    if radius == 0.0:
        raise GraphError("shift operator has zero spectral radius (nilpotent)")
    return GraphShiftOperator(gso.matrix / radius, Variant.SCALED_ADJACENCY)


def normalized_laplacian(gso: GraphShiftOperator) -> GraphShiftOperator:
    """``D^{-1/2} (diag(A 1) - A) D^{-1/2}`` of an undirected weighted graph."""
    adj = gso.matrix
    if gso.directed:
        raise GraphError("normalized Laplacian requires a symmetric operator")
    if adj.nnz and adj.data.min() < 0:
        raise GraphError("normalized Laplacian requires nonnegative weights")
    degree = np.asarray(adj.sum(axis=1)).ravel()
    if np.any(degree <= 0):
        isolated = np.flatnonzero(degree <= 0).tolist()
        raise GraphError(f"isolated nodes {isolated} have zero degree")
    inv_sqrt = sp.diags(1.0 / np.sqrt(degree))
    lap = sp.diags(degree) - adj
    norm = inv_sqrt @ lap @ inv_sqrt
    # symmetrize away the last-ulp asymmetry of the triple product
    norm = (norm + norm.T) * 0.5
    return GraphShiftOperator(sp.csr_matrix(norm), Variant.NORMALIZED_LAPLACIAN)


def _check_nodes(gso: GraphShiftOperator, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != gso.n_nodes:
        raise GraphError(f"signal has {x.shape[-1]} nodes, operator has {gso.n_nodes}")
    return x


def apply_shift(gso: GraphShiftOperator, x: np.ndarray) -> np.ndarray:
    """One sparse shift of every feature row: ``x S^T`` over the last axis."""
    x = _check_nodes(gso, x)
    flat = x.reshape(-1, gso.n_nodes)
    out = (gso.matrix @ flat.T).T
    return np.ascontiguousarray(out).reshape(x.shape)


def shift_sequence(gso: GraphShiftOperator, x: np.ndarray, count: int) -> list[np.ndarray]:
    """``[x, Sx, ..., S^{count-1} x]`` by repeated sparse shifts."""
    if count < 1:
        raise GraphError(f"count must be at least 1, got {count}")
    x = _check_nodes(gso, x)
    seq = [x.copy()]
    for _ in range(count - 1):
        seq.append(apply_shift(gso, seq[-1]))
    return seq


def weighted_degree(gso: GraphShiftOperator) -> np.ndarray:
    """In-plus-out weight of every node; halved on symmetric operators."""
    mag = abs(gso.matrix)
    deg = np.asarray(mag.sum(axis=1)).ravel() + np.asarray(mag.sum(axis=0)).ravel()
    return deg if gso.directed else deg / 2.0


def sbm_generate(n_nodes: int, n_communities: int, p_in: float, p_out: float,
                 rng_seed: int, max_attempts: int = 100):
    """Connected undirected stochastic block model with equal communities.

    Returns ``(gso, communities)`` where ``communities[i]`` is the block of
    node ``i``; nodes are grouped contiguously, ``i // (N / C)``.  Disconnected
    draws are rejected and redrawn from the same generator stream.
    """
    if n_communities < 1 or n_nodes % n_communities:
        raise GraphError(f"{n_nodes} nodes cannot be split into {n_communities} equal communities")
    if not 0.0 <= p_out <= p_in <= 1.0:
        raise GraphError(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    rng = np.random.default_rng(rng_seed)
    communities = np.arange(n_nodes) // (n_nodes // n_communities)
    same = communities[:, None] == communities[None, :]
    prob = np.where(same, p_in, p_out)
    upper = np.triu(np.ones((n_nodes, n_nodes), dtype=bool), k=1)
    for _ in range(max_attempts):
        draw = rng.random((n_nodes, n_nodes)) < prob
        adj = np.where(draw & upper, 1.0, 0.0)
        adj = adj + adj.T
        csr = sp.csr_matrix(adj)
        n_comp, _ = connected_components(csr, directed=False)
        if n_comp == 1:
            return GraphShiftOperator(csr, Variant.RAW_ADJACENCY), communities
    raise GraphError(f"no connected SBM draw in {max_attempts} attempts")


def community_sources(gso: GraphShiftOperator, communities: np.ndarray) -> list[int]:
    """Largest-degree node of every community, lowest index on ties."""
    deg = weighted_degree(gso)
    sources = []
    for c in np.unique(communities):
        members = np.flatnonzero(communities == c)
        best = members[np.argmax(deg[members])]  # argmax keeps the first maximum
        sources.append(int(best))
    return sources


def diffuse_source_dataset(gso: GraphShiftOperator, source_nodes: Sequence[int], max_t: int,
                           n_samples: int, rng_seed: int) -> LabeledDataset:
    """Samples ``S^t delta_c`` labelled by the position of ``c`` in ``source_nodes``.

    ``c`` is uniform over ``source_nodes`` and ``t`` uniform over
    ``{0, ..., max_t - 1}``.
    """
    if gso.variant is not Variant.SCALED_ADJACENCY:
        raise GraphError("diffusion datasets need a spectrally scaled adjacency")
    sources = [int(c) for c in source_nodes]
    if not sources:
        raise GraphError("source_nodes is empty")
    if max_t < 1:
        raise GraphError(f"max_t must be at least 1, got {max_t}")
    for c in sources:
        if not 0 <= c < gso.n_nodes:
            raise GraphError(f"source node {c} out of range")
    n = gso.n_nodes
    deltas = np.zeros((len(sources), n))
    deltas[np.arange(len(sources)), sources] = 1.0
    # diffused[t, j] = S^t delta_{sources[j]}
    diffused = np.stack(shift_sequence(gso, deltas, max_t))
    rng = np.random.default_rng(rng_seed)
    labels = rng.integers(0, len(sources), size=n_samples)
    times = rng.integers(0, max_t, size=n_samples)
    signals = diffused[times, labels][:, None, :]
    return LabeledDataset(signals, labels)


def read_edge_list(path) -> GraphShiftOperator:
    """Parse ``src dst weight`` lines; ``#`` starts a comment, ``N <int>`` sets the size."""
    edges, n_nodes = [], None
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "N":
            if len(parts) != 2:
                raise GraphError(f"{path}:{lineno}: malformed header {raw!r}")
            n_nodes = int(parts[1])
            continue
        if len(parts) != 3:
            raise GraphError(f"{path}:{lineno}: expected 'src dst weight', got {raw!r}")
        edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
    if n_nodes is None:
        n_nodes = 1 + max((max(s, d) for s, d, _ in edges), default=-1)
    return from_edge_list(edges, n_nodes)


def write_edge_list(gso: GraphShiftOperator, path) -> None:
    coo = gso.matrix.tocoo()
    order = np.lexsort((coo.row, coo.col))
    lines = ["# src dst weight  ([S]_{dst,src} = weight)", f"N {gso.n_nodes}"]
    for k in order:
        lines.append(f"{coo.col[k]} {coo.row[k]} {float(coo.data[k])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
