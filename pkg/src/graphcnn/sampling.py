"""Node selection, nested sampling matrices and reduced k-shift matrices.

A selection plan keeps, for every layer, an ordered list of original-graph
node indices.  Layers are nested: layer ``l`` is always a subset of layer
``l - 1``, and layer 0 is the whole graph in natural order.  The sampling
matrices are implied by the plan and materialised on demand.

All three strategies produce a ranking of ``counts[0]`` nodes and every
deeper layer keeps a prefix of it, so nestedness holds by construction.
Ties are broken towards the lowest original index.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from graphcnn.graph import GraphError, GraphShiftOperator, Variant, weighted_degree

# relative width inside which two scores count as tied
TIE_TOL = 1e-9


class SamplingError(ValueError):
    """Raised for invalid plans, strategy inputs or selection matrices."""


@dataclass(frozen=True, eq=False)
class NodeSelectionPlan:
    n_nodes: int
    selected: tuple

    def __post_init__(self):
        layers = []
        prev = None
        for l, layer in enumerate(self.selected, start=1):
            arr = np.array(layer, dtype=np.int64).ravel()
            if arr.size == 0:
                raise SamplingError(f"layer {l} selects no nodes")
            if arr.min() < 0 or arr.max() >= self.n_nodes:
                raise SamplingError(f"layer {l} has node indices outside [0, {self.n_nodes})")
            if np.unique(arr).size != arr.size:
                raise SamplingError(f"layer {l} selects a node twice")
            if prev is not None and not np.isin(arr, prev).all():
                raise SamplingError(f"layer {l} is not a subset of layer {l - 1}")
            arr.flags.writeable = False
            layers.append(arr)
            prev = arr
        object.__setattr__(self, "selected", tuple(layers))

    @property
    def n_layers(self) -> int:
        return len(self.selected)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.n_nodes] + [len(s) for s in self.selected]

    def nodes(self, layer: int) -> np.ndarray:
        """Original indices retained at ``layer``; layer 0 is every node."""
        self._check_layer(layer, allow_zero=True)
        return np.arange(self.n_nodes) if layer == 0 else self.selected[layer - 1]

    def positions(self, layer: int) -> np.ndarray:
        """Row of each ``layer`` node inside the ``layer - 1`` ordering."""
        self._check_layer(layer)
        prev = self.nodes(layer - 1)
        where = {int(v): i for i, v in enumerate(prev)}
        return np.array([where[int(v)] for v in self.selected[layer - 1]], dtype=np.int64)

    def sampling_matrix(self, layer: int) -> np.ndarray:
        """Binary ``C_l`` of shape ``(N_l, N_{l-1})``."""
        pos = self.positions(layer)
        c = np.zeros((len(pos), self.layer_sizes[layer - 1]))
        c[np.arange(len(pos)), pos] = 1.0
        return c

    def prefix(self, n_layers: int) -> "NodeSelectionPlan":
        return NodeSelectionPlan(self.n_nodes, self.selected[:n_layers])

    def to_text(self) -> str:
        lines = [f"N {self.n_nodes}"]
        lines += [" ".join(str(int(v)) for v in layer) for layer in self.selected]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NodeSelectionPlan":
        rows = [r.split("#", 1)[0].split() for r in text.splitlines()]
        rows = [r for r in rows if r]
        if not rows or rows[0][0] != "N" or len(rows[0]) != 2:
            raise SamplingError("plan text must start with 'N <nodes>'")
        return cls(int(rows[0][1]), tuple([int(v) for v in r] for r in rows[1:]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NodeSelectionPlan":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def _check_layer(self, layer: int, allow_zero: bool = False):
        low = 0 if allow_zero else 1
        if not low <= layer <= self.n_layers:
            raise SamplingError(f"layer {layer} outside [{low}, {self.n_layers}]")


def check_sampling_matrix(c: np.ndarray) -> None:
    """Raise unless ``c`` is binary with unit row sums and column sums <= 1."""
    c = np.asarray(c)
    if c.ndim != 2:
        raise SamplingError(f"sampling matrix must be 2-D, got shape {c.shape}")
    if not np.isin(c, (0.0, 1.0)).all():
        raise SamplingError("sampling matrix is not binary")
    if not (c.sum(axis=1) == 1).all():
        raise SamplingError("sampling matrix rows must each select exactly one entry")
    if not (c.sum(axis=0) <= 1).all():
        raise SamplingError("sampling matrix selects some entry more than once")


def nested_sampling(plan: NodeSelectionPlan, layer: int) -> np.ndarray:
    """``D_l``: row ``m`` has its single one at the original index of the m-th kept node."""
    if layer < 1:
        raise SamplingError(f"layer {layer} outside [1, {plan.n_layers}]")
    nodes = plan.nodes(layer)
    d = np.zeros((len(nodes), plan.n_nodes))
    d[np.arange(len(nodes)), nodes] = 1.0
    return d


def selector_indices(d) -> np.ndarray:
    """Column index of the one in each row of a selection matrix (or pass through indices)."""
    d = np.asarray(d)
    if d.ndim == 1:
        return d.astype(np.int64)
    check_sampling_matrix(d)
    return np.argmax(d, axis=1).astype(np.int64)


def _validate_counts(counts: Sequence[int], n_nodes: int) -> list[int]:
    counts = [int(c) for c in counts]
    if not counts:
        raise SamplingError("at least one layer size is required")
    if any(c < 1 for c in counts):
        raise SamplingError(f"layer sizes must be positive, got {counts}")
    if any(b > a for a, b in zip(counts, counts[1:])):
        raise SamplingError(f"layer sizes must be nonincreasing, got {counts}")
    if counts[0] > n_nodes:
        raise SamplingError(f"cannot select {counts[0]} of {n_nodes} nodes")
    return counts


def _plan_from_ranking(n_nodes: int, ranking: Sequence[int], counts: list[int]) -> NodeSelectionPlan:
    ranking = list(ranking)
    return NodeSelectionPlan(n_nodes, tuple(ranking[:c] for c in counts))


def rank_descending(scores: np.ndarray) -> np.ndarray:
    """Indices by decreasing score; near-equal scores fall back to index order."""
    scores = np.asarray(scores, dtype=np.float64)
    scale = np.max(np.abs(scores)) if scores.size else 0.0
    if scale == 0.0:
        return np.arange(scores.size)
    quantized = np.round(scores / scale / TIE_TOL)
    return np.lexsort((np.arange(scores.size), -quantized))


def _argmax_lowest(values: np.ndarray) -> int:
    return int(rank_descending(values)[0])


def _symmetric_dense(gso: GraphShiftOperator) -> np.ndarray:
    if gso.directed:
        raise SamplingError("spectral selection needs a symmetric shift operator")
    s = gso.dense()
    return (s + s.T) * 0.5


def select_by_degree(gso: GraphShiftOperator, counts: Sequence[int]) -> NodeSelectionPlan:
    counts = _validate_counts(counts, gso.n_nodes)
    ranking = rank_descending(weighted_degree(gso))
    return _plan_from_ranking(gso.n_nodes, ranking[:counts[0]], counts)


def frequency_basis(gso: GraphShiftOperator) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs ordered from low to high graph frequency.

    Laplacian variants order by ascending eigenvalue, adjacency variants by
    descending eigenvalue.
    """
    s = _symmetric_dense(gso)
    try:
        w, v = np.linalg.eigh(s)
    except np.linalg.LinAlgError as exc:
        raise SamplingError(f"eigendecomposition failed: {exc}") from exc
    if not gso.variant.is_laplacian:
        w, v = w[::-1], v[:, ::-1]
    return w, v


def leverage_scores(gso: GraphShiftOperator, n_basis: int) -> np.ndarray:
    _, v = frequency_basis(gso)
    if not 1 <= n_basis <= gso.n_nodes:
        raise SamplingError(f"n_basis must lie in [1, {gso.n_nodes}], got {n_basis}")
    return np.sum(v[:, :n_basis] ** 2, axis=1)


def select_by_eds(gso: GraphShiftOperator, counts: Sequence[int], n_basis: int | None = None,
                  deflate: bool = False) -> NodeSelectionPlan:
    """Top leverage scores over the ``n_basis`` lowest-frequency eigenvectors.

    Equal scores are separated by residual energy: after each pick the chosen
    row is projected out of the basis, and among tied candidates the one with
    the most energy left wins (lowest index after that).

    With ``deflate`` the ranking is greedy: after each pick the chosen row is
    projected out of the basis before rescoring (column-pivoted QR), which
    spreads picks across eigenvector supports.
    """
    counts = _validate_counts(counts, gso.n_nodes)
    n_basis = counts[0] if n_basis is None else int(n_basis)
    if n_basis < counts[0]:
        raise SamplingError(f"n_basis={n_basis} is smaller than the {counts[0]} nodes requested")
    scores = leverage_scores(gso, n_basis)
    _, v = frequency_basis(gso)
    residual = v[:, :n_basis].copy()
    chosen: list[int] = []
    if not deflate:
        # top-k by score; a tie goes to the node least explained by the rows already
        # chosen (largest residual energy), then to the lowest index
        scale = max(float(scores.max()), TIE_TOL)
        remaining = list(range(gso.n_nodes))
        for _ in range(counts[0]):
            best = max(scores[i] for i in remaining)
            tied = [i for i in remaining if scores[i] >= best - TIE_TOL * scale]
            energy = np.sum(residual[tied] ** 2, axis=1)
            pick = tied[_argmax_lowest(energy)]
            norm = np.linalg.norm(residual[pick])
            if norm > TIE_TOL:
                q = residual[pick] / norm
                residual -= np.outer(residual @ q, q)
            chosen.append(pick)
            remaining.remove(pick)
        return _plan_from_ranking(gso.n_nodes, chosen, counts)
    for _ in range(counts[0]):
        energy = np.sum(residual ** 2, axis=1)
        energy[chosen] = -1.0
        if energy.max() <= TIE_TOL:
            # basis exhausted: fall back to the plain scores
            rest = [i for i in rank_descending(scores) if i not in chosen]
            chosen.extend(rest[:counts[0] - len(chosen)])
            break
        pick = _argmax_lowest(energy)
        q = residual[pick] / np.linalg.norm(residual[pick])
        residual -= np.outer(residual @ q, q)
        chosen.append(pick)
    return _plan_from_ranking(gso.n_nodes, chosen, counts)


def select_by_spectral_proxies(gso: GraphShiftOperator, counts: Sequence[int],
                               proxy_order: int = 2) -> NodeSelectionPlan:
    """Greedy spectral-proxy selection.

    With selected set ``S`` the next node is the one where the minimum
    eigenvector of ``(S^k)^T S^k`` restricted to the unselected nodes has the
    largest energy (``k = proxy_order``).
    """
    counts = _validate_counts(counts, gso.n_nodes)
    if proxy_order < 1:
        raise SamplingError(f"proxy_order must be at least 1, got {proxy_order}")
    s = _symmetric_dense(gso)
    sk = np.linalg.matrix_power(s, proxy_order)
    gram = sk.T @ sk
    remaining = list(range(gso.n_nodes))
    chosen: list[int] = []
    for _ in range(counts[0]):
        sub = gram[np.ix_(remaining, remaining)]
        try:
            _, vecs = np.linalg.eigh(sub)
        except np.linalg.LinAlgError as exc:
            raise SamplingError(f"eigendecomposition failed: {exc}") from exc
        pick = remaining[_argmax_lowest(vecs[:, 0] ** 2)]
        chosen.append(pick)
        remaining.remove(pick)
    return _plan_from_ranking(gso.n_nodes, chosen, counts)


STRATEGIES: dict[str, Callable[..., NodeSelectionPlan]] = {
    "degree": select_by_degree,
    "eds": select_by_eds,
    "sp": select_by_spectral_proxies,
}


def select_nodes(strategy: str, gso: GraphShiftOperator, counts: Sequence[int], **options) -> NodeSelectionPlan:
    try:
        fn = STRATEGIES[strategy]
    except KeyError:
        raise SamplingError(f"unknown sampling strategy {strategy!r}; "
                            f"choose from {sorted(STRATEGIES)}") from None
    return fn(gso, counts, **options)


def regular_plan(n_nodes: int, counts: Sequence[int]) -> NodeSelectionPlan:
    """Equally spaced nested selection: layer ``l`` keeps every ``N/N_l``-th node."""
    counts = _validate_counts(counts, n_nodes)
    layers = []
    for c in counts:
        if n_nodes % c:
            raise SamplingError(f"{c} does not divide {n_nodes}")
        layers.append(list(range(0, n_nodes, n_nodes // c)))
    return NodeSelectionPlan(n_nodes, tuple(layers))


@dataclass(frozen=True, eq=False)
class ReducedShiftSet:
    """``S^(k) = D S^k D^T`` for ``k = 0, ..., order - 1``, stacked as ``(K, n, n)``."""

    matrices: np.ndarray
    nodes: np.ndarray

    def __post_init__(self):
        mats = np.ascontiguousarray(self.matrices, dtype=np.float64)
        mats.flags.writeable = False
        object.__setattr__(self, "matrices", mats)

    @property
    def order(self) -> int:
        return self.matrices.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.matrices.shape[1]

    def __getitem__(self, k):
        return self.matrices[k]


def reduced_k_shifts(gso: GraphShiftOperator, d, order: int) -> ReducedShiftSet:
    """Reduced k-shift matrices by sparse shifts of the columns of ``D^T``."""
    idx = selector_indices(d)
    if order < 1:
        raise SamplingError(f"order must be at least 1, got {order}")
    if idx.size and (idx.min() < 0 or idx.max() >= gso.n_nodes):
        raise GraphError(f"selection does not fit a {gso.n_nodes}-node operator")
    if np.unique(idx).size != idx.size:
        raise SamplingError("selection repeats a node")
    cols = np.zeros((gso.n_nodes, idx.size))
    cols[idx, np.arange(idx.size)] = 1.0
    mats = np.empty((order, idx.size, idx.size))
    for k in range(order):
        mats[k] = cols[idx, :]
        if k + 1 < order:
            cols = gso.matrix @ cols
    return ReducedShiftSet(mats, idx)


def gather_shifts(gso: GraphShiftOperator, in_nodes, out_nodes, order: int) -> np.ndarray:
    """``M_q = P_out S^q P_in^T`` for ``q < order``, shape ``(order, |out|, |in|)``.

    Applied to a signal on ``in_nodes`` it yields the shifted signal read at
    ``out_nodes``.
    """
    in_idx, out_idx = selector_indices(in_nodes), selector_indices(out_nodes)
    if order < 1:
        raise SamplingError(f"order must be at least 1, got {order}")
    for idx in (in_idx, out_idx):
        if idx.size and (idx.min() < 0 or idx.max() >= gso.n_nodes):
            raise GraphError(f"selection does not fit a {gso.n_nodes}-node operator")
    cols = np.zeros((gso.n_nodes, in_idx.size))
    cols[in_idx, np.arange(in_idx.size)] = 1.0
    mats = np.empty((order, out_idx.size, in_idx.size))
    for q in range(order):
        mats[q] = cols[out_idx, :]
        if q + 1 < order:
            cols = gso.matrix @ cols
    return mats


def graph_neighborhood(shifts: ReducedShiftSet, node_row: int, alpha: int,
                       threshold: float = 0.0) -> list[int]:
    """Rows reachable from ``node_row`` within ``alpha`` shifts, ascending.

    With ``threshold == 0`` any nonzero ``[S^(k)]_{nm}`` counts; with a
    positive threshold the raw entry must reach it.  The node itself is
    always included.
    """
    if alpha < 0 or alpha >= shifts.order:
        raise SamplingError(f"alpha={alpha} needs {alpha + 1} shift powers, only {shifts.order} cached")
    if threshold < 0:
        raise SamplingError(f"threshold must be nonnegative, got {threshold}")
    rows = shifts.matrices[:alpha + 1, node_row, :]
    hit = (rows != 0) if threshold == 0 else (rows >= threshold)
    members = set(np.flatnonzero(hit.any(axis=0)).tolist())
    members.add(int(node_row))
    return sorted(members)
