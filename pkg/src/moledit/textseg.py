"""Caption segmentation into descriptions, keyword labelling and paraphrase.

The keyword and synonym tables live in ``moledit/data/*.tsv``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .expertise import ExpertiseSegmentation, Segment


class ExpertiseLabel(str, enum.Enum):
    FUNCTION = "Function"
    ORIGIN = "Origin"
    STRUCTURE = "Structure"
    TYPE = "Type"
    PROPERTY = "Property"
    OTHER = "Other"


@dataclass(frozen=True)
class Description:
    text: str
    start: int
    end: int
    label: ExpertiseLabel


@dataclass(frozen=True)
class CaptionSegmentation:
    descriptions: tuple[Description, ...]
    source: str

    def __len__(self) -> int:
        return len(self.descriptions)

    @property
    def texts(self) -> list[str]:
        return [d.text for d in self.descriptions]


def read_tsv(path: str | Path | None, name: str) -> list[tuple[str, str]]:
    if path is None:
        text = resources.files("moledit.data").joinpath(name).read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    rows = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, value = line.split("\t")
        rows.append((key, value))
    return rows


@lru_cache(maxsize=None)
def keyword_rules() -> tuple[tuple[re.Pattern, ExpertiseLabel], ...]:
    return tuple(
        (re.compile(r"\b" + re.escape(k), re.IGNORECASE), ExpertiseLabel(v))
        for k, v in read_tsv(None, "keywords.tsv")
    )


@lru_cache(maxsize=None)
def synonym_table() -> tuple[tuple[str, str], ...]:
    return tuple(read_tsv(None, "synonyms.tsv"))


_CLOSERS = {")": "(", "]": "["}


def _split_points(text: str) -> list[int]:
    """End offsets (exclusive) of descriptions."""
    cuts: list[int] = []
    depth = 0
    n = len(text)
    for i, ch in enumerate(text):
        if ch in "([":
            depth += 1
        elif ch in _CLOSERS:
            depth = max(0, depth - 1)
        elif depth == 0 and ch == ";":
            cuts.append(i + 1)
        elif depth == 0 and ch in ".!?":
            rest = text[i + 1 :]
            stripped = rest.lstrip()
            if not stripped:
                cuts.append(i + 1)
            elif len(stripped) < len(rest) and stripped[0].isupper():
                cuts.append(i + 1)
    if not cuts or cuts[-1] < n:
        cuts.append(n)
    return cuts


def segment_caption(text: str) -> CaptionSegmentation:
    if not text.strip():
        raise ValueError("cannot segment an empty caption")
    descs = []
    begin = 0
    for end in _split_points(text):
        chunk = text[begin:end]
        if chunk.strip():
            lead = len(chunk) - len(chunk.lstrip())
            s, e = begin + lead, begin + len(chunk.rstrip())
            descs.append(Description(text[s:e], s, e, classify_description(text[s:e])))
        begin = end
    return CaptionSegmentation(tuple(descs), text)


def classify_description(text: str) -> ExpertiseLabel:
    for pattern, label in keyword_rules():
        if pattern.search(text):
            return label
    return ExpertiseLabel.OTHER


# ---------------------------------------------------------------------------
# word tokens

_WORD = re.compile(r"\d+(?:\.\d+)+|[A-Za-z0-9]+(?:[-'][A-Za-z0-9]+)*|[^\sA-Za-z0-9]")


def word_tokens(text: str) -> list[tuple[str, int, int]]:
    """Model-side caption tokens with character spans."""
    return [(m.group(), m.start(), m.end()) for m in _WORD.finditer(text)]


def detokenize(tokens: list[str]) -> str:
    out = ""
    for tok in tokens:
        if out and tok not in ".,;:!?)]" and not out.endswith(("(", "[")):
            out += " "
        out += tok
    return out


def caption_token_segmentation(text: str) -> tuple[list[str], ExpertiseSegmentation]:
    """Word tokens of ``text`` and their partition by description."""
    seg = segment_caption(text)
    toks = word_tokens(text)
    assignment = []
    n = 0
    for _, start, _ in toks:
        while n + 1 < len(seg.descriptions) and start >= seg.descriptions[n + 1].start:
            n += 1
        assignment.append(n)
    labels = [d.label.value for d in seg.descriptions]
    return [t for t, _, _ in toks], ExpertiseSegmentation.from_assignment(labels, assignment)


# ---------------------------------------------------------------------------
# paraphrase


@dataclass(frozen=True)
class Rewrite:
    text: str
    applied: tuple[str, ...]

    @property
    def no_rewrite(self) -> bool:
        return not self.applied


_TEMPLATE = re.compile(r"^It is (an?) ")


def _candidate_ops(seg: CaptionSegmentation) -> list[tuple[str, int, str, str]]:
    """(kind, description index, pattern, replacement) for every applicable rule."""
    ops = []
    for n, d in enumerate(seg.descriptions):
        if _TEMPLATE.match(d.text):
            ops.append(("template", n, "", ""))
            continue
        for pat, rep in synonym_table():
            if re.search(r"\b" + re.escape(pat) + r"\b", d.text):
                ops.append(("synonym", n, pat, rep))
                break
    if len(seg.descriptions) >= 2:
        ops.append(("reorder", -1, "", ""))
    return ops


_MAX_OPS = 12


def rewrite(text: str, seed: int = 0) -> Rewrite:
    """Deterministic rule paraphrase; ``seed`` picks which rules fire.

    Applicable rules are indexed; the variant for ``seed`` is the
    ``seed``-th entry of a fixed permutation of the non-empty rule subsets,
    so distinct seeds below ``2**n - 1`` yield distinct rule subsets.
    """
    seg = segment_caption(text)
    ops = _candidate_ops(seg)[:_MAX_OPS]
    if not ops:
        return Rewrite(text, ())
    n_subsets = 2 ** len(ops) - 1
    order = np.random.default_rng(len(ops)).permutation(n_subsets) + 1
    mask = int(order[seed % n_subsets])
    chosen = [op for i, op in enumerate(ops) if mask >> i & 1]

    parts = seg.texts
    applied = []
    for kind, n, pat, rep in chosen:
        if kind == "template":
            parts[n] = _TEMPLATE.sub(r"This compound is \1 ", parts[n], count=1)
            applied.append("template")
        elif kind == "synonym":
            parts[n] = re.sub(r"\b" + re.escape(pat) + r"\b", rep, parts[n], count=1)
            applied.append(f"synonym:{pat}")
    if any(kind == "reorder" for kind, *_ in chosen):
        parts = parts[1:] + parts[:1]
        applied.append("reorder")
    return Rewrite(" ".join(parts), tuple(applied))


def paraphrase(text: str, seed: int = 0) -> str:
    return rewrite(text, seed).text


def normalize_ws(text: str) -> str:
    return " ".join(text.split())
