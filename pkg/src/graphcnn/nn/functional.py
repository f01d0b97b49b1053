"""Differentiable operations used by the graph architectures.

Layout conventions: a batch of graph or time signals is ``(B, F, N)``;
stacked shifts are ``(B, K, G, N)`` with the shift power on axis 1; filter
taps are ``(K, F_out, F_in)``.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from graphcnn.nn.tensor import Tensor, as_tensor

_kink_log: list | None = None


@contextmanager
def record_kinks():
    """Collect the activation pattern of every ReLU and max-pool in the block.

    Two evaluations with identical patterns lie on the same linear piece, which
    is what the gradient checker needs to know.
    """
    global _kink_log
    saved, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = saved


def _log_pattern(arr: np.ndarray) -> None:
    if _kink_log is not None:
        _kink_log.append(arr.copy())


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor.from_op(a.data + b.data, (a, b),
                          lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(a.data * factor, (a,), lambda g: (g * factor,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return Tensor.from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))
    return Tensor.from_op(out, ts, backward)


def take(a, index, axis: int) -> Tensor:
    """Gather slices ``index`` along ``axis`` (repeats allowed)."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        moved = np.moveaxis(g, axis, 0)
        acc = np.zeros((a.shape[axis],) + moved.shape[1:])
        np.add.at(acc, index, moved)
        return (np.moveaxis(acc, 0, axis),)
    return Tensor.from_op(np.take(a.data, index, axis=axis), (a,), backward)


def relu(x) -> Tensor:
    """Elementwise ``max(0, x)``; the derivative at exactly 0 is taken as 0."""
    x = as_tensor(x)
    mask = x.data > 0
    _log_pattern(mask)
    return Tensor.from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def linear(x, weight, bias=None) -> Tensor:
    """``x W^T + b`` for ``x`` of shape ``(B, D)`` and ``W`` of shape ``(C, D)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"input width {x.shape[-1]} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"bias shape {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)
    return Tensor.from_op(out, parents, backward)


def bias_add(u, bias) -> Tensor:
    """Add one bias per feature to ``u`` of shape ``(B, F, M)``."""
    u, bias = as_tensor(u), as_tensor(bias)
    if bias.shape != (u.shape[1],):
        raise ValueError(f"bias shape {bias.shape} does not match {u.shape[1]} features")
    return Tensor.from_op(u.data + bias.data[None, :, None], (u, bias),
                          lambda g: (g, g.sum(axis=(0, 2))))


def pad_groups(groups: Sequence[Sequence[int]], n_inputs: int) -> np.ndarray:
    """Rectangular ``(n_groups, max_len)`` index table for :func:`max_pool_groups`.

    Each group is sorted and right-padded with its own smallest member, so the
    first maximum along a row is the lowest tied input index.
    """
    if not groups:
        raise ValueError("no pooling groups given")
    rows = []
    for j, grp in enumerate(groups):
        grp = sorted(int(i) for i in grp)
        if not grp:
            raise ValueError(f"pooling group {j} is empty")
        if grp[0] < 0 or grp[-1] >= n_inputs:
            raise ValueError(f"pooling group {j} indexes outside [0, {n_inputs})")
        rows.append(grp)
    width = max(len(r) for r in rows)
    return np.array([r + [r[0]] * (width - len(r)) for r in rows], dtype=np.int64)


def _first_argmax(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Arg-max and max over the last axis; ties go to the lowest index."""
    if a.shape[-1] > 8:
        arg = np.argmax(a, axis=-1)
        return arg, np.take_along_axis(a, arg[..., None], -1)[..., 0]
    # numpy reductions over a very short trailing axis are slow; compare column by column
    best = a[..., 0].copy()
    arg = np.zeros(best.shape, dtype=np.int64)
    for i in range(1, a.shape[-1]):
        col = a[..., i]
        better = col > best
        best = np.where(better, col, best)
        arg[better] = i
    return arg, best


def max_pool_groups(x, groups) -> Tensor:
    """Max of the last axis over each index group.

    ``groups`` is either a list of index lists or a table already built by
    :func:`pad_groups`.  The gradient goes to the arg-max entry, the lowest
    index among ties.
    """
    x = as_tensor(x)
    n_in = x.shape[-1]
    if isinstance(groups, np.ndarray) and groups.ndim == 2:
        table = groups.astype(np.int64, copy=False)
        if table.size and (table.min() < 0 or table.max() >= n_in):
            raise ValueError(f"pooling table indexes outside [0, {n_in})")
    else:
        table = pad_groups(groups, n_in)
    data = np.ascontiguousarray(x.data)
    n_rows, width = table.shape
    if np.array_equal(table, np.arange(n_rows * width).reshape(n_rows, width)):
        # back-to-back windows: a reshape replaces the gather
        gathered = data[..., :n_rows * width].reshape(data.shape[:-1] + (n_rows, width))
        arg, out = _first_argmax(gathered)
        src = arg + width * np.arange(n_rows)
    else:
        # wide neighbourhoods on dense graphs repeat the same group; pool each distinct row once
        uniq, inverse = np.unique(table, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        gathered = data[..., uniq]                      # (..., n_unique, width)
        arg, out = _first_argmax(gathered)
        src = uniq[np.arange(len(uniq)), arg][..., inverse]
        out = out[..., inverse]
    _log_pattern(src)
    lead = out.shape[:-1]

    def backward(g):
        rows = np.arange(int(np.prod(lead, dtype=np.int64)))[:, None] * n_in
        flat = (rows + src.reshape(len(rows), -1)).ravel()
        dx = np.bincount(flat, weights=g.ravel(), minlength=len(rows) * n_in)
        return (dx.reshape(lead + (n_in,)),)
    return Tensor.from_op(out, (x,), backward)


def contiguous_groups(length: int, factor: int) -> list[list[int]]:
    """Non-overlapping windows ``[j*p, ..., j*p + p - 1]``; a short tail is dropped."""
    if factor < 1:
        raise ValueError(f"pool factor must be positive, got {factor}")
    n_out = length // factor
    if n_out < 1:
        raise ValueError(f"pool factor {factor} exceeds sequence length {length}")
    return [list(range(j * factor, (j + 1) * factor)) for j in range(n_out)]


def shift_stack(x, mats: np.ndarray) -> Tensor:
    """``out[b, k, g, m] = sum_n mats[k, m, n] x[b, g, n]`` for constant ``mats``."""
    x = as_tensor(x)
    mats = np.asarray(mats)
    if x.shape[-1] != mats.shape[-1]:
        raise ValueError(f"signal has {x.shape[-1]} nodes, shift matrices expect {mats.shape[-1]}")
    mats_t = np.ascontiguousarray(mats.transpose(0, 2, 1))
    out = np.matmul(x.data[:, None], mats_t[None])      # (B, K, G, M)

    def backward(g):
        return (np.matmul(g, mats[None]).sum(axis=1),)
    return Tensor.from_op(out, (x,), backward)


def sparse_shift_stack(x, shift: sp.csr_matrix, nodes: np.ndarray, order: int) -> Tensor:
    """Zero-pad ``x`` onto ``nodes`` of the full graph and stack ``S^k`` of it.

    Returns ``(B, K, G, N)``.  Only sparse products with ``S`` are used, so the
    cost is ``O(K |E| B G)``.
    """
    x = as_tensor(x)
    nodes = np.asarray(nodes, dtype=np.int64)
    b, f, _ = x.shape
    n = shift.shape[0]
    shift_t = shift.T.tocsr()
    cur = np.zeros((n, b * f))
    cur[nodes] = x.data.reshape(b * f, -1).T
    out = np.empty((order, n, b * f))
    out[0] = cur
    for k in range(1, order):
        out[k] = shift @ out[k - 1]

    def backward(g):
        g = g.transpose(1, 3, 0, 2).reshape(order, n, b * f)
        acc = g[order - 1].copy()
        for k in range(order - 2, -1, -1):
            acc = shift_t @ acc + g[k]
        return (acc[nodes].T.reshape(b, f, -1),)
    data = out.reshape(order, n, b, f).transpose(2, 0, 3, 1)
    return Tensor.from_op(np.ascontiguousarray(data), (x,), backward)


def time_shift_stack(z, order: int) -> Tensor:
    """``out[b, k, g, t] = z[b, g, t - k]`` with zeros before the sequence start.

    Shifts of ``t_len`` or more are all zeros.
    """
    z = as_tensor(z)
    t_len = z.shape[-1]
    if order < 1:
        raise ValueError(f"order must be positive, got {order}")
    out = np.zeros((z.shape[0], order) + z.shape[1:])
    for k in range(min(order, t_len)):
        out[:, k, :, k:] = z.data[..., :t_len - k]

    def backward(g):
        dz = np.zeros(z.shape)
        for k in range(min(order, t_len)):
            dz[..., :t_len - k] += g[:, k, :, k:]
        return (dz,)
    return Tensor.from_op(out, (z,), backward)


def tap_mix(z, taps) -> Tensor:
    """``out[b, f, m] = sum_{k, g} taps[k, f, g] z[b, k, g, m]``."""
    z, taps = as_tensor(z), as_tensor(taps)
    bsz, k, g_in, m = z.shape
    if taps.shape[0] != k or taps.shape[2] != g_in:
        raise ValueError(f"taps {taps.shape} do not fit stacked input {z.shape}")
    f_out = taps.shape[1]
    w = taps.data.transpose(1, 0, 2).reshape(f_out, k * g_in)
    zf = z.data.reshape(bsz, k * g_in, m)
    out = np.matmul(w, zf)

    def backward(g):
        dw = np.tensordot(g, zf, axes=([0, 2], [0, 2]))           # (F, K*G)
        dz = np.matmul(w.T, g).reshape(z.shape)
        return dz, dw.reshape(f_out, k, g_in).transpose(1, 0, 2)
    return Tensor.from_op(out, (z, taps), backward)


def softmax_cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Loss ``-log softmax(logits)[label]`` and its gradient for one sample."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.size:
        raise ValueError(f"label {label} outside [0, {logits.size})")
    shifted = logits - logits.max()
    log_norm = np.log(np.exp(shifted).sum())
    loss = float(log_norm - shifted[label])
    grad = np.exp(shifted - log_norm)
    grad[label] -= 1.0
    return loss, grad


def cross_entropy(logits, labels) -> Tensor:
    """Mean softmax cross-entropy of ``(B, C)`` logits against integer labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    bsz, n_classes = logits.shape
    if labels.shape != (bsz,):
        raise ValueError(f"{labels.shape} labels for {bsz} logits")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels outside [0, {n_classes})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(bsz)
    loss = float(np.mean(log_norm - shifted[rows, labels]))
    probs = np.exp(shifted - log_norm[:, None])

    def backward(g):
        grad = probs.copy()
        grad[rows, labels] -= 1.0
        return (grad * (float(g) / bsz),)
    return Tensor.from_op(np.array(loss), (logits,), backward)
