"""Central finite-difference check of analytic parameter gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from graphcnn.nn.functional import record_kinks
from graphcnn.nn.tensor import Parameter, Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    excluded: list = field(default_factory=list)   # (parameter name, flat index)
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _same_pattern(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def gradient_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
                   tolerance: float = 1e-4, step: float = 1e-5, scale_floor: float = 1e-6,
                   max_coords: int | None = None, rng_seed: int = 0) -> GradCheckResult:
    """Compare backprop gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the loss from the current parameter values.  A
    coordinate whose ``+step`` or ``-step`` evaluation changes any ReLU or
    max-pool decision is excluded (reported, not failed), since the loss is
    not differentiable across that kink.  Relative error uses
    ``max(|analytic|, |numeric|, scale_floor)`` as denominator.
    ``max_coords`` caps the number of coordinates checked per parameter,
    chosen at random.
    """
    for p in params:
        p.zero_grad()
    with record_kinks() as base_pattern:
        loss = loss_fn()
    loss.backward()
    analytic = [p.grad.copy() for p in params]
    rng = np.random.default_rng(rng_seed)

    worst, checked, excluded = 0.0, 0, []
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            with record_kinks() as up_pattern:
                up = float(loss_fn().data)
            flat[i] = orig - step
            with record_kinks() as down_pattern:
                down = float(loss_fn().data)
            flat[i] = orig
            if not (_same_pattern(base_pattern, up_pattern) and _same_pattern(base_pattern, down_pattern)):
                excluded.append((p.name, int(i)))
                continue
            numeric = (up - down) / (2.0 * step)
            a = grad.reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), scale_floor)
            worst = max(worst, rel)
            checked += 1
    for p in params:
        p.zero_grad()
    return GradCheckResult(worst, checked, excluded, tolerance)
