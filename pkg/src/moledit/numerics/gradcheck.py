from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def fd_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
) -> float:
    """Worst relative error between backprop and central differences.

    ``f`` rebuilds the scalar loss from the current parameter values.  At most
    ``max_coords`` coordinates (sampled without replacement across all
    parameters) are perturbed.
    """
    for p in params:
        p.grad = None
    loss = f()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]

    worst = 0.0
    for i, j in coords:
        flat = params[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        up = float(f().data)
        flat[j] = orig - h
        down = float(f().data)
        flat[j] = orig
        numeric = (up - down) / (2 * h)
        a = float(analytic[i].reshape(-1)[j])
        denom = max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, abs(a - numeric) / denom)
    for p in params:
        p.grad = None
    return worst
