"""Multi-expert knowledge adapter.

An adapter wraps one layer.  At encoder sites every expertise segment gets
one gate vector from the mean of its input embeddings and all of its tokens
share it; at decoder sites each token is gated on its own and the summed
expert update is scaled by ``lam``.  Experts start at zero, so a fresh
adapter leaves the wrapped layer's output untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .backbone import HookContext
from .expertise import ExpertiseSegmentation, SegmentationMismatch
from .numerics import Tensor

ENCODER = "encoder"
DECODER = "decoder"


class EmptySegment(ValueError):
    pass


@dataclass
class AdapterConfig:
    d_model: int = 64
    n_experts: int = 5
    top_k: int = 1
    lam: float = 1.0
    gate_noise_std: float = 0.1
    expert_hidden: int | None = None  # two-layer experts when set
    gate_init_std: float | None = None  # default 1/sqrt(d_model)

    def __post_init__(self):
        if not 1 <= self.top_k <= self.n_experts:
            raise ValueError(f"need 1 <= top_k <= n_experts, got k={self.top_k}, P={self.n_experts}")
        if self.gate_noise_std < 0:
            raise ValueError("gate_noise_std must be non-negative")


@dataclass(frozen=True)
class GateVector:
    weights: np.ndarray

    @property
    def nonzero(self) -> int:
        return int(np.count_nonzero(self.weights))

    @property
    def expert(self) -> int:
        return int(np.argmax(self.weights))


def top_k_mask(probs: np.ndarray, k: int) -> np.ndarray:
    """0/1 mask keeping the ``k`` largest entries per row; ties go to the lower index."""
    probs = np.atleast_2d(probs)
    order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    mask = np.zeros_like(probs)
    np.put_along_axis(mask, order, 1.0, axis=1)
    return mask


class MEKAdapter:
    """Adapter state for one wrapped layer (``kind`` is encoder or decoder)."""

    def __init__(self, config: AdapterConfig, kind: str, name: str = "", seed: int = 0):
        if kind not in (ENCODER, DECODER):
            raise ValueError(f"unknown adapter kind {kind!r}")
        self.config = config
        self.kind = kind
        self.name = name or kind
        self.active = True
        c = config
        rng = np.random.default_rng(seed)
        std = c.gate_init_std if c.gate_init_std is not None else 1.0 / math.sqrt(c.d_model)
        self.gate = Tensor(rng.normal(0.0, std, (c.n_experts, c.d_model)), requires_grad=True, name="W_g")
        self.experts: list[list[Tensor]] = []
        for p in range(c.n_experts):
            if c.expert_hidden is None:
                self.experts.append([Tensor(np.zeros((c.d_model, c.d_model)), requires_grad=True, name=f"W_p{p}")])
            else:
                h = c.expert_hidden
                w1 = rng.normal(0.0, 1.0 / math.sqrt(c.d_model), (h, c.d_model))
                self.experts.append(
                    [
                        Tensor(w1, requires_grad=True, name=f"W_p{p}.in"),
                        Tensor(np.zeros((c.d_model, h)), requires_grad=True, name=f"W_p{p}.out"),
                    ]
                )
        self._basis = np.eye(c.n_experts)

    # ------------------------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return [self.gate] + [w for ws in self.experts for w in ws]

    def state_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        pre = f"{prefix}{self.name}/"
        return {pre + t.name: t.data.copy() for t in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        pre = f"{prefix}{self.name}/"
        for t in self.parameters():
            arr = state[pre + t.name]
            if arr.shape != t.data.shape:
                raise nx.ShapeMismatch(f"load {pre + t.name}", arr.shape, t.data.shape)
            t.data = np.array(arr, dtype=np.float64)

    # ------------------------------------------------------------------
    def _gates(self, pooled: Tensor, training: bool, rng: np.random.Generator | None) -> tuple[Tensor, np.ndarray]:
        """Masked softmax gates for each row of ``pooled`` (rows x d)."""
        logits = pooled @ nx.transpose(self.gate)
        if training and self.config.gate_noise_std > 0:
            if rng is None:
                raise ValueError("training-time gating needs an rng")
            logits = nx.add(logits, rng.normal(0.0, self.config.gate_noise_std, logits.shape))
        probs = nx.softmax(logits, axis=1)
        mask = top_k_mask(probs.data, self.config.top_k)
        return nx.mul(probs, mask), probs.data

    def _expert_out(self, p: int, z: Tensor) -> Tensor:
        ws = self.experts[p]
        if len(ws) == 1:
            return z @ nx.transpose(ws[0])
        return nx.relu(z @ nx.transpose(ws[0])) @ nx.transpose(ws[1])

    def _mixture(self, z_prev: Tensor, token_gates: Tensor) -> Tensor:
        """Sum over experts of ``gate[i, p] * W_p z_i`` for every token row ``i``."""
        gates = token_gates.data
        delta = None
        for p in range(self.config.n_experts):
            if not gates[:, p].any():
                continue
            column = token_gates @ self._basis[p]
            term = nx.row_scale(self._expert_out(p, z_prev), column)
            delta = term if delta is None else nx.add(delta, term)
        return delta

    def _record(self, ctx: HookContext, gates: np.ndarray, labels: list[str] | None) -> None:
        if ctx.trace is not None:
            ctx.trace.append({"site": self.name, "kind": self.kind, "gates": gates.copy(), "labels": labels})

    # ------------------------------------------------------------------
    def apply_encoder(
        self,
        z_prev: Tensor,
        seg: ExpertiseSegmentation,
        base_out: Tensor,
        training: bool = False,
        rng: np.random.Generator | None = None,
        ctx: HookContext | None = None,
    ) -> Tensor:
        n_tok = z_prev.shape[0]
        if seg is None or seg.n_tokens != n_tok:
            got = None if seg is None else seg.n_tokens
            raise SegmentationMismatch(f"segmentation covers {got} tokens, layer input has {n_tok}")
        pool = np.zeros((len(seg), n_tok))
        for n, s in enumerate(seg.segments):
            pool[n, list(s.tokens)] = 1.0 / len(s.tokens)
        means = nx.matmul(pool, z_prev)
        gates, _ = self._gates(means, training, rng)
        if ctx is not None:
            self._record(ctx, gates.data, seg.labels)
        token_gates = nx.gather_rows(gates, seg.token_segment())
        delta = self._mixture(z_prev, token_gates)
        return base_out if delta is None else nx.add(base_out, delta)

    def apply_decoder(
        self,
        z_prev: Tensor,
        base_out: Tensor,
        training: bool = False,
        rng: np.random.Generator | None = None,
        ctx: HookContext | None = None,
    ) -> Tensor:
        gates, _ = self._gates(z_prev, training, rng)
        if ctx is not None:
            self._record(ctx, gates.data, None)
        delta = self._mixture(z_prev, gates)
        if delta is None:
            return base_out
        return nx.add(base_out, nx.scale(delta, self.config.lam))

    def __call__(self, z_prev: Tensor, base_out: Tensor, ctx: HookContext) -> Tensor:
        if self.kind == ENCODER:
            return self.apply_encoder(z_prev, ctx.segmentation, base_out, ctx.training, ctx.rng, ctx)
        return self.apply_decoder(z_prev, base_out, ctx.training, ctx.rng, ctx)


def _as_array(z) -> np.ndarray:
    return z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)


def gate_expertise(
    a: MEKAdapter,
    embeddings,
    segment,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> GateVector:
    """Gate vector for one expertise segment of a token matrix."""
    idx = list(segment)
    if not idx:
        raise EmptySegment("cannot gate an empty segment")
    pooled = _as_array(embeddings)[idx].mean(axis=0, keepdims=True)
    with nx.no_grad():
        gates, _ = a._gates(Tensor(pooled), training, rng)
    return GateVector(gates.data[0].copy())


def gate_token(a: MEKAdapter, z_i, training: bool = False, rng: np.random.Generator | None = None) -> GateVector:
    with nx.no_grad():
        gates, _ = a._gates(Tensor(_as_array(z_i).reshape(1, -1)), training, rng)
    return GateVector(gates.data[0].copy())
