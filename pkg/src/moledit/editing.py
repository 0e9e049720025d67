"""Applying edits: adapter training with a frozen backbone, bank registration, baselines."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .backbone import (
    END,
    START,
    HookContext,
    Model,
    decode_states,
    encode,
    generate,
    install_wrap,
    sequence_loss,
    train_step,
)
from .eaes import ExpertiseMemoryBank, RoutedOutput, input_means, route_inference
from .expertise import ExpertiseSegmentation
from .meka import DECODER, ENCODER, AdapterConfig, MEKAdapter

log = logging.getLogger(__name__)

# per-task learning rates of the original setup; the toy backbone overrides them
PAPER_LR = {"cap": 1e-4, "mol": 2e-5}


class ConflictingFlags(ValueError):
    pass


class NoImprovement(RuntimeWarning):
    pass


@dataclass(frozen=True)
class Ablation:
    no_meka: bool = False
    no_eaes: bool = False
    encoder_only: bool = False
    decoder_only: bool = False

    def __post_init__(self):
        if self.encoder_only and self.decoder_only:
            raise ConflictingFlags("encoder_only and decoder_only cannot both be set")

    @classmethod
    def parse(cls, flags: str | Sequence[str] | None) -> Ablation:
        if not flags:
            return cls()
        names = flags.split(",") if isinstance(flags, str) else list(flags)
        known = set(cls.__dataclass_fields__)
        kwargs = {}
        for name in (n.strip() for n in names):
            if not name:
                continue
            if name not in known:
                raise ValueError(f"unknown ablation flag {name!r}; expected some of {sorted(known)}")
            kwargs[name] = True
        return cls(**kwargs)

    @property
    def names(self) -> list[str]:
        return [k for k in self.__dataclass_fields__ if getattr(self, k)]


@dataclass
class EditorConfig:
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    encoder_layer: int = 2
    decoder_layer: int = 3
    tau: float = 0.9
    ablation: Ablation = field(default_factory=Ablation)
    seed: int = 0


@dataclass(frozen=True)
class EditSample:
    src: tuple[int, ...]
    segmentation: ExpertiseSegmentation
    target: tuple[int, ...]


@dataclass
class EditRequest:
    task: str
    samples: tuple[EditSample, ...]
    steps: int = 200
    lr: float = 1e-4
    stop_loss: float = 1e-3

    def __post_init__(self):
        self.samples = tuple(self.samples)
        if len(self.samples) not in (1, 2):
            raise ValueError(f"an edit takes 1 or 2 samples, got {len(self.samples)}")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")


@dataclass
class EditResult:
    edit_id: int
    final_loss: float
    steps_used: int
    bank_added: int
    reliability: float  # teacher-forced token accuracy on the edit targets, adapters active
    losses: list[float]
    wall_ms: float
    improved: bool

    def log_record(self, task: str, max_points: int = 50) -> dict:
        idx = np.unique(np.linspace(0, len(self.losses) - 1, min(max_points, len(self.losses))).round().astype(int)) if self.losses else []
        return {
            "edit_id": self.edit_id,
            "task": task,
            "loss_curve": [self.losses[i] for i in idx],
            "bank_entries": self.bank_added,
            "wall_time_ms": round(self.wall_ms, 3),
        }


class MolEditor:
    """A frozen backbone with wrapped adapters and an expertise memory bank."""

    def __init__(self, model: Model, config: EditorConfig | None = None):
        self.model = model
        self.config = config or EditorConfig()
        c = self.config
        acfg = c.adapter
        if c.ablation.no_meka:
            acfg = replace(acfg, n_experts=1, top_k=1)
        self.adapter_config = acfg
        self.bank = ExpertiseMemoryBank(tau=c.tau)
        self.adapters: dict[tuple[str, int], MEKAdapter] = {}
        if not c.ablation.decoder_only:
            self._wrap(ENCODER, c.encoder_layer, ENCODER)
        if not c.ablation.encoder_only:
            self._wrap(DECODER, c.decoder_layer, DECODER)
        self._rng = np.random.default_rng(c.seed)
        self.n_edits = 0

    def _wrap(self, side: str, layer: int, kind: str) -> None:
        a = MEKAdapter(self.adapter_config, kind, name=f"{side}{layer}", seed=self.config.seed * 1000 + layer + (0 if kind == ENCODER else 500))
        install_wrap(self.model, side, layer, a)
        self.adapters[(side, layer)] = a

    def parameters(self) -> list[nx.Tensor]:
        return [p for a in self.adapters.values() for p in a.parameters()]

    @property
    def whole_input(self) -> bool:
        return self.config.ablation.no_eaes

    # ------------------------------------------------------------------
    def edit_loss(self, samples: Sequence[EditSample], training: bool = True) -> nx.Tensor:
        total = None
        for s in samples:
            ctx = HookContext(segmentation=s.segmentation, training=training, rng=self._rng)
            loss = sequence_loss(self.model, s.src, s.target, hooks_active=True, ctx=ctx)
            total = loss if total is None else nx.add(total, loss)
        return nx.scale(total, 1.0 / len(samples))

    def apply_edit(self, req: EditRequest) -> EditResult:
        t0 = time.perf_counter()
        edit_id = self.n_edits
        self.n_edits += 1
        # bank keys come from the adapter-free pass, before any training
        with nx.no_grad():
            pre = [encode(self.model, s.src).final for s in req.samples]
        params = self.parameters()
        opt = nx.Adam(params, lr=req.lr)
        frozen = list(self.model.params.values())
        saved = [t.requires_grad for t in frozen]
        for t in frozen:
            t.requires_grad = False
        losses: list[float] = []
        try:
            for _ in range(req.steps):
                loss = self.edit_loss(req.samples)
                losses.append(float(loss.data))
                if losses[-1] <= req.stop_loss:
                    break
                nx.backward(loss)
                opt.step()
                opt.zero_grad()
        finally:
            for t, r in zip(frozen, saved):
                t.requires_grad = r
        with nx.no_grad():
            final = float(self.edit_loss(req.samples, training=False).data)
        added = 0
        for z, s in zip(pre, req.samples):
            seg = s.segmentation
            labels = ["whole"] if self.whole_input else seg.labels
            added += self.bank.register_edit(edit_id, input_means(z, seg, self.whole_input), labels)
        improved = not losses or final < losses[0] or losses[0] <= req.stop_loss
        if req.steps and not improved:
            log.warning("edit %d: loss did not improve (%.4g)", edit_id, final)
        acc = float(np.mean([self.token_accuracy(s) for s in req.samples]))
        used = len(losses) if not losses or losses[-1] > req.stop_loss else len(losses) - 1
        return EditResult(edit_id, final, used, added, acc, losses, 1000 * (time.perf_counter() - t0), improved)

    def token_accuracy(self, s: EditSample) -> float:
        tgt = list(s.target)
        ctx = HookContext(segmentation=s.segmentation)
        with nx.no_grad():
            enc = encode(self.model, s.src, True, ctx)
            logits = decode_states(self.model, enc, [START, *tgt], True, ctx)
        return float(np.mean(np.argmax(logits.data, axis=1) == np.array([*tgt, END])))

    # ------------------------------------------------------------------
    def route(self, src: Sequence[int], seg: ExpertiseSegmentation, trace: list | None = None) -> RoutedOutput:
        return route_inference(self.model, self.bank, src, seg, self.whole_input, trace)

    def generate_forced(self, src: Sequence[int], seg: ExpertiseSegmentation, trace: list | None = None) -> list[int]:
        """Output with the adapters switched on regardless of the bank."""
        return generate(self.model, src, hooks_active=True, ctx=HookContext(segmentation=seg, trace=trace))

    def state_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for a in self.adapters.values():
            out.update(a.state_dict("adapter/"))
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for a in self.adapters.values():
            a.load_state_dict(state, "adapter/")


def write_edit_log(path: str | Path, records: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


SCOPES = {
    "encoder": lambda k: k.startswith("enc") or k == "src_emb",
    "decoder": lambda k: k.startswith("dec") or k in ("tgt_emb", "out_w", "out_b"),
    "all": lambda k: True,
}


def fine_tune_baseline(model: Model, samples: Sequence[tuple[Sequence[int], Sequence[int]]], scope: str, steps: int, lr: float = 1e-4) -> Model:
    """Plain fine-tuning of a copy of ``model`` on ``samples``."""
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {sorted(SCOPES)}, got {scope!r}")
    dup = model.copy()
    trainable = SCOPES[scope]
    params = [t for k, t in dup.params.items() if trainable(k)]
    opt = nx.Adam(params, lr=lr)
    for step in range(steps):
        src, tgt = samples[step % len(samples)]
        train_step(dup, src, tgt, trainable, optimizer=opt)
    return dup
