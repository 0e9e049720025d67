from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SegmentationMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    label: str
    tokens: tuple[int, ...]


@dataclass(frozen=True)
class ExpertiseSegmentation:
    """A partition of ``range(n_tokens)`` into labelled expertise units.

    Segments need not be contiguous; their order is the order of their first
    token.
    """

    segments: tuple[Segment, ...]
    n_tokens: int

    def __post_init__(self):
        seen = np.zeros(self.n_tokens, dtype=int)
        for seg in self.segments:
            if not seg.tokens:
                raise SegmentationMismatch(f"empty segment {seg.label!r}")
            for i in seg.tokens:
                if not 0 <= i < self.n_tokens:
                    raise SegmentationMismatch(f"token {i} outside 0..{self.n_tokens - 1}")
                seen[i] += 1
        if self.n_tokens and not np.all(seen == 1):
            raise SegmentationMismatch("segments do not partition the token range")

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.segments]

    def token_segment(self) -> np.ndarray:
        """Segment index of every token."""
        out = np.empty(self.n_tokens, dtype=np.int64)
        for n, seg in enumerate(self.segments):
            out[list(seg.tokens)] = n
        return out

    @classmethod
    def whole(cls, n_tokens: int, label: str = "whole") -> ExpertiseSegmentation:
        return cls((Segment(label, tuple(range(n_tokens))),), n_tokens)

    @classmethod
    def from_assignment(cls, labels: list[str], assignment) -> ExpertiseSegmentation:
        """Build from a per-token segment index; empty segments are dropped."""
        assignment = list(assignment)
        groups: dict[int, list[int]] = {}
        for i, n in enumerate(assignment):
            groups.setdefault(n, []).append(i)
        ordered = sorted(groups.items(), key=lambda kv: kv[1][0])
        return cls(tuple(Segment(labels[n], tuple(toks)) for n, toks in ordered), len(assignment))
