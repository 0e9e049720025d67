"""Text and molecule similarity scores (SIM_T and SIM_G).

Per-sample scores only; aggregation happens in :mod:`moledit.bench`.
"""

from __future__ import annotations

import math
import re
import warnings
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

from .chem import SmilesError, fingerprint, read_smiles, smiles_tokens_lenient, tanimoto, tokenize_smiles


class EmptyCandidateWarning(UserWarning):
    pass


class InvalidReference(ValueError):
    pass


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def modified_precision(cand: Sequence[str], ref: Sequence[str], n: int) -> tuple[int, int]:
    """Clipped n-gram matches and total candidate n-grams."""
    c, r = _ngrams(cand, n), _ngrams(ref, n)
    return sum(min(k, r[g]) for g, k in c.items()), max(len(cand) - n + 1, 0)


def bleu_n(cand: Sequence[str], ref: Sequence[str], n: int = 4, smoothing: bool = True) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not ref:
        raise ValueError("reference must be non-empty")
    if not cand:
        warnings.warn("empty candidate scores 0", EmptyCandidateWarning, stacklevel=2)
        return 0.0
    log_sum = 0.0
    for i in range(1, n + 1):
        num, den = modified_precision(cand, ref, i)
        if num == 0:
            if not smoothing:
                return 0.0
            num, den = num + 1, den + 1
        log_sum += math.log(num / den)
    bp = 1.0 if len(cand) >= len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return bp * math.exp(log_sum / n)


def rouge1(cand: Sequence[str], ref: Sequence[str]) -> float:
    if not ref:
        raise ValueError("reference must be non-empty")
    c, r = Counter(cand), Counter(ref)
    return sum(min(k, c[w]) for w, k in r.items()) / len(ref)


_SUFFIXES = ("ing", "es", "ed", "s")


def stem(word: str) -> str:
    w = word.lower()
    for suf in _SUFFIXES:
        if w.endswith(suf) and len(w) - len(suf) >= 3:
            return w[: -len(suf)]
    return w


def _stem_match(a: str, b: str) -> bool:
    sa, sb = stem(a), stem(b)
    if sa == sb:
        return True
    lcp = len(_common_prefix(sa, sb))
    return lcp >= 4 and lcp == min(len(sa), len(sb))


def _common_prefix(a: str, b: str) -> str:
    i = 0
    while i < min(len(a), len(b)) and a[i] == b[i]:
        i += 1
    return a[:i]


def meteor_alignment(cand: Sequence[str], ref: Sequence[str]) -> list[tuple[int, int]]:
    """Greedy one-to-one alignment: exact matches first, then stem matches."""
    used_c: set[int] = set()
    used_r: set[int] = set()
    pairs: list[tuple[int, int]] = []
    for same in (lambda a, b: a.lower() == b.lower(), _stem_match):
        for i, w in enumerate(cand):
            if i in used_c:
                continue
            for j, v in enumerate(ref):
                if j not in used_r and same(w, v):
                    used_c.add(i)
                    used_r.add(j)
                    pairs.append((i, j))
                    break
    return sorted(pairs)


def meteor_lite(cand: Sequence[str], ref: Sequence[str], alpha: float = 0.9, beta: float = 3.0, gamma: float = 0.5) -> float:
    if not ref:
        raise ValueError("reference must be non-empty")
    pairs = meteor_alignment(cand, ref)
    m = len(pairs)
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    f = p * r / (alpha * p + (1 - alpha) * r)
    chunks = 1
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if not (i1 == i0 + 1 and j1 == j0 + 1):
            chunks += 1
    penalty = gamma * (chunks / m) ** beta
    return f * (1 - penalty)


def levenshtein(a: Sequence, b: Sequence) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def normalized_levenshtein(a: str, b: str) -> float:
    if not a and not b:
        return 0.0
    return levenshtein(a, b) / max(len(a), len(b))


_TEXT_TOKEN = re.compile(r"\w+|[^\w\s]")


def text_tokens(text: str) -> list[str]:
    return _TEXT_TOKEN.findall(text.lower())


@dataclass(frozen=True)
class TextSimReport:
    bleu2: float
    meteor_lite: float
    rouge1_recall: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class MolSimReport:
    bleu4: float
    lev_norm: float
    fp_tanimoto: float
    candidate_valid: bool

    def as_dict(self) -> dict[str, float]:
        d = asdict(self)
        d["candidate_valid"] = float(self.candidate_valid)
        return d


def sim_text(cand: str, ref: str) -> TextSimReport:
    c, r = text_tokens(cand), text_tokens(ref)
    if not r:
        raise ValueError("reference caption has no tokens")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyCandidateWarning)
        b2 = bleu_n(c, r, 2, smoothing=True)
    return TextSimReport(b2, meteor_lite(c, r), rouge1(c, r))


def sim_mol(cand_smiles: str, ref_smiles: str, radius: int = 2, width: int = 1024) -> MolSimReport:
    try:
        ref_graph = read_smiles(ref_smiles)
    except SmilesError as exc:
        raise InvalidReference(f"reference {ref_smiles!r} does not parse: {exc}") from exc
    try:
        cand_graph = read_smiles(cand_smiles)
        cand_toks = tokenize_smiles(cand_smiles).lexemes
    except SmilesError:
        cand_graph = None
        cand_toks = smiles_tokens_lenient(cand_smiles)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyCandidateWarning)
        b4 = bleu_n(cand_toks, tokenize_smiles(ref_smiles).lexemes, 4, smoothing=True)
    lev = normalized_levenshtein(cand_smiles, ref_smiles)
    if cand_graph is None:
        return MolSimReport(b4, lev, 0.0, False)
    fp = tanimoto(fingerprint(cand_graph, radius, width), fingerprint(ref_graph, radius, width))
    return MolSimReport(b4, lev, fp, True)
