from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .tensor import Tensor


@numba.njit(cache=True)
def _adam_kernel(data, g, m, v, lr, b1, b2, eps, c1, c2):
    for i in range(data.shape[0]):
        m[i] = b1 * m[i] + (1.0 - b1) * g[i]
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
        data[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


@dataclass
class OptimizerState:
    """Adam moments held as flat buffers over an ordered parameter list."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    sizes: list[int] = field(default_factory=list)

    def init(self, params: list[Tensor]) -> None:
        self.sizes = [p.data.size for p in params]
        n = sum(self.sizes)
        self.m = np.zeros(n)
        self.v = np.zeros(n)


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: OptimizerState) -> None:
    """Bias-corrected Adam update, in place.  ``None`` grads count as zero."""
    if state.m is None:
        state.init(params)
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    off = 0
    for p, n, gr in zip(params, state.sizes, grads):
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        g = np.zeros(n) if gr is None else np.ascontiguousarray(gr, dtype=np.float64).reshape(-1)
        _adam_kernel(
            p.data.reshape(-1), g, state.m[off : off + n], state.v[off : off + n],
            state.lr, state.beta1, state.beta2, state.eps, c1, c2,
        )
        off += n


class Adam:
    """Adam over a fixed, ordered parameter list."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)
