"""Expertise-aware editing switcher.

The memory bank keeps one mean encoder embedding per expertise segment of
every applied edit.  At inference an input switches the adapters on only if
each of its expertise means has cosine similarity at least ``tau`` with some
bank entry.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .backbone import HookContext, decode_greedy, encode, generate
from .numerics import Tensor, no_grad

MAGIC = b"MEKB"
VERSION = 1


class EmptySegment(ValueError):
    pass


class DegenerateEmbedding(ValueError):
    pass


class BankFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ExpertiseMean:
    vector: np.ndarray
    degenerate: bool


def expertise_mean(enc_final, segment: Sequence[int], tol: float = 1e-12) -> ExpertiseMean:
    idx = list(segment)
    if not idx:
        raise EmptySegment("expertise segment has no tokens")
    z = enc_final.data if isinstance(enc_final, Tensor) else np.asarray(enc_final, dtype=np.float64)
    vec = z[idx].mean(axis=0)
    return ExpertiseMean(vec, bool(np.linalg.norm(vec) <= tol))


@dataclass(frozen=True)
class BankEntry:
    edit_id: int
    label: str
    embedding: np.ndarray


@dataclass(frozen=True)
class SwitchDecision:
    active: bool
    best_similarity: tuple[float, ...]
    limiting: int  # index of the input expertise with the lowest best similarity

    @property
    def min_similarity(self) -> float:
        return min(self.best_similarity) if self.best_similarity else float("-inf")


@dataclass
class ExpertiseMemoryBank:
    tau: float = 0.9
    entries: list[BankEntry] = field(default_factory=list)
    _matrix: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.entries)

    def register_edit(self, edit_id: int, means: Sequence[np.ndarray], labels: Sequence[str] | None = None) -> int:
        """Append one entry per expertise mean; returns the number added."""
        labels = list(labels) if labels is not None else ["expertise"] * len(means)
        new = []
        for vec, label in zip(means, labels):
            vec = np.asarray(vec, dtype=np.float64)
            if not np.all(np.isfinite(vec)) or np.linalg.norm(vec) == 0.0:
                raise DegenerateEmbedding(f"edit {edit_id}: zero-norm or non-finite mean for {label!r}")
            new.append(BankEntry(int(edit_id), label, vec.copy()))
        self.entries.extend(new)
        self._matrix = None
        return len(new)

    def _normalized(self) -> np.ndarray:
        if self._matrix is None:
            mat = np.stack([e.embedding for e in self.entries])
            self._matrix = mat / np.linalg.norm(mat, axis=1, keepdims=True)
        return self._matrix

    def best_similarities(self, means: Sequence[np.ndarray]) -> np.ndarray:
        if not self.entries:
            return np.full(len(means), -np.inf)
        q = np.stack([np.asarray(m, dtype=np.float64) for m in means])
        norms = np.linalg.norm(q, axis=1, keepdims=True)
        q = np.divide(q, norms, out=np.zeros_like(q), where=norms > 0)
        return (q @ self._normalized().T).max(axis=1)

    def decide(self, means: Sequence[np.ndarray], tau: float | None = None) -> SwitchDecision:
        if len(means) == 0:
            raise ValueError("decide needs at least one expertise mean")
        tau = self.tau if tau is None else tau
        best = self.best_similarities(means)
        limiting = int(np.argmin(best))
        active = bool(self.entries) and bool(np.all(best >= tau))
        return SwitchDecision(active, tuple(float(b) for b in best), limiting)

    # ------------------------------------------------------------------
    def save(self, path: str | Path) -> None:
        parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<d", self.tau), struct.pack("<I", len(self.entries))]
        for e in self.entries:
            label = e.label.encode("utf-8")
            parts.append(struct.pack("<QI", e.edit_id, len(label)))
            parts.append(label)
            parts.append(struct.pack("<I", e.embedding.shape[0]))
            parts.append(np.ascontiguousarray(e.embedding, dtype="<f8").tobytes())
        Path(path).write_bytes(b"".join(parts))

    @classmethod
    def load(cls, path: str | Path) -> ExpertiseMemoryBank:
        buf = Path(path).read_bytes()
        if buf[:4] != MAGIC:
            raise BankFormatError(f"{path}: bad magic {buf[:4]!r}")
        (version,) = struct.unpack_from("<I", buf, 4)
        if version != VERSION:
            raise BankFormatError(f"{path}: unsupported version {version}")
        (tau,) = struct.unpack_from("<d", buf, 8)
        (count,) = struct.unpack_from("<I", buf, 16)
        pos = 20
        bank = cls(tau=tau)
        try:
            for _ in range(count):
                edit_id, n = struct.unpack_from("<QI", buf, pos)
                pos += 12
                label = buf[pos : pos + n].decode("utf-8")
                pos += n
                (d,) = struct.unpack_from("<I", buf, pos)
                pos += 4
                vec = np.frombuffer(buf, dtype="<f8", count=d, offset=pos).astype(np.float64)
                pos += 8 * d
                bank.entries.append(BankEntry(edit_id, label, vec))
        except (struct.error, ValueError) as exc:
            raise BankFormatError(f"{path}: truncated entry") from exc
        return bank


def input_means(enc_final, seg, whole_input: bool = False) -> list[np.ndarray]:
    """Expertise means of one input, or its single whole-input mean."""
    z = enc_final.data if isinstance(enc_final, Tensor) else np.asarray(enc_final)
    if whole_input or seg is None:
        return [z.mean(axis=0)]
    return [expertise_mean(z, s.tokens).vector for s in seg.segments]


@dataclass(frozen=True)
class RoutedOutput:
    tokens: list[int]
    decision: SwitchDecision


def route_inference(model, bank: ExpertiseMemoryBank, src: Sequence[int], seg, whole_input: bool = False, trace: list | None = None) -> RoutedOutput:
    """Greedy output of ``model`` with its wrapped adapters switched by ``bank``.

    The decision uses an adapter-free encoder pass; when it is inactive that
    same pass is decoded, so the output is the unedited model's output.
    """
    with no_grad():
        acts = encode(model, src)
    decision = bank.decide(input_means(acts.final, seg, whole_input))
    if not decision.active:
        return RoutedOutput(decode_greedy(model, acts), decision)
    ctx = HookContext(segmentation=seg, trace=trace)
    return RoutedOutput(generate(model, src, hooks_active=True, ctx=ctx), decision)
