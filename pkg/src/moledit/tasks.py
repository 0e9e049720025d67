"""Task-specific views of a sample: source tokens, expertise segments, target.

``cap`` (caption generation) reads SMILES and writes a caption; its source
expertise is the functional-group token partition.  ``mol`` (molecule
generation) reads a caption and writes SMILES; its source expertise is the
description partition of the caption.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backbone import Vocab
from .chem import detect_functional_groups, fingerprint, group_token_spans, read_smiles, tanimoto, tokenize_smiles
from .corpus import outdated_caption, outdated_vocabulary
from .expertise import ExpertiseSegmentation
from .metrics import sim_mol, sim_text
from .textseg import caption_token_segmentation, detokenize, paraphrase, word_tokens

CAPTION = "cap"
MOLECULE = "mol"
_ALIASES = {"cap": CAPTION, "caption_gen": CAPTION, "caption": CAPTION, "mol": MOLECULE, "molecule_gen": MOLECULE, "molecule": MOLECULE}


def canonical_task(task: str) -> str:
    try:
        return _ALIASES[task]
    except KeyError:
        raise ValueError(f"unknown task {task!r}; expected one of {sorted(_ALIASES)}") from None


@dataclass(frozen=True)
class Query:
    """Encoder input for one sample."""

    tokens: tuple[str, ...]
    segmentation: ExpertiseSegmentation


def smiles_query(smiles: str) -> Query:
    g = read_smiles(smiles)
    seg = group_token_spans(g, detect_functional_groups(g))
    return Query(tuple(g.tokens.lexemes), seg)


def caption_query(caption: str) -> Query:
    toks, seg = caption_token_segmentation(caption)
    return Query(tuple(toks), seg)


def smiles_target(smiles: str) -> list[str]:
    return tokenize_smiles(smiles).lexemes


def caption_target(caption: str) -> list[str]:
    return [t for t, _, _ in word_tokens(caption)]


class TaskCodec:
    def __init__(self, task: str, src_vocab: Vocab, tgt_vocab: Vocab):
        self.task = canonical_task(task)
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab

    # text-level views
    def query(self, sample: dict, text: str | None = None) -> Query:
        """Encoder input for ``sample``; ``text`` overrides the input string (paraphrases)."""
        if self.task == CAPTION:
            return smiles_query(text or sample["smiles"])
        return caption_query(text or sample["caption"])

    def reference(self, sample: dict) -> str:
        if self.task == CAPTION:
            return sample.get("target_caption") or sample["caption"]
        return sample.get("target_smiles") or sample["smiles"]

    def target_tokens(self, text: str) -> list[str]:
        return caption_target(text) if self.task == CAPTION else smiles_target(text)

    def render(self, ids: Sequence[int]) -> str:
        toks = self.tgt_vocab.decode(ids)
        return detokenize(toks) if self.task == CAPTION else "".join(toks)

    # id-level views
    def src_ids(self, q: Query) -> list[int]:
        return self.src_vocab.encode(q.tokens)

    def tgt_ids(self, text: str) -> list[int]:
        return self.tgt_vocab.encode(self.target_tokens(text))

    # scoring
    def similarity(self, candidate: str, reference: str) -> dict[str, float]:
        if self.task == CAPTION:
            return sim_text(candidate, reference).as_dict()
        return sim_mol(candidate, reference).as_dict()

    @property
    def selection_metric(self) -> str:
        """Score used to pick edit and locality candidates."""
        return "bleu2" if self.task == CAPTION else "fp_tanimoto"

    @property
    def reliability_metric(self) -> str:
        return "bleu2" if self.task == CAPTION else "bleu4"


def source_text(sample: dict, task: str) -> str:
    return sample["smiles"] if canonical_task(task) == CAPTION else sample["caption"]


def build_vocabs(records: Sequence[dict], task: str, paraphrase_seeds: Sequence[int] = (0, 1, 2, 3)) -> tuple[Vocab, Vocab]:
    """Source and target vocabularies covering the corpus and its caption paraphrases."""
    task = canonical_task(task)
    captions = [r["caption"] for r in records] + [r["target_caption"] for r in records if r.get("target_caption")]
    smiles = [r["smiles"] for r in records] + [r["target_smiles"] for r in records if r.get("target_smiles")]
    cap_seqs = [caption_target(c) for c in captions]
    cap_seqs += [caption_target(paraphrase(c, s)) for c in captions for s in paraphrase_seeds]
    cap_seqs.append(caption_target(" ".join(outdated_vocabulary())))
    mol_seqs = [smiles_target(s) for s in smiles]
    if task == CAPTION:
        return Vocab.build(mol_seqs), Vocab.build(cap_seqs)
    return Vocab.build(cap_seqs), Vocab.build(mol_seqs)


@dataclass
class PretrainSet:
    pairs: list[tuple[list[int], list[int]]]
    stale: dict[str, str]  # sample id -> outdated target the model is trained on


def stale_targets(records: Sequence[dict], task: str, fraction: float, seed: int = 0) -> dict[str, str]:
    """Seeded choice of samples whose pretraining target is deliberately wrong.

    Caption samples get an obsolete-style caption; molecule samples get the
    corpus SMILES least similar to their own.  These become the knowledge an
    edit has to correct.
    """
    task = canonical_task(task)
    rng = np.random.default_rng(seed)
    n = int(round(fraction * len(records)))
    chosen = sorted(int(i) for i in rng.choice(len(records), size=n, replace=False)) if n else []
    out: dict[str, str] = {}
    if task == CAPTION:
        for i in chosen:
            out[records[i]["id"]] = outdated_caption(rng)
        return out
    fps = [fingerprint(read_smiles(r["smiles"])) for r in records]
    for i in chosen:
        sims = [tanimoto(fps[i], fp) if j != i else 2.0 for j, fp in enumerate(fps)]
        out[records[i]["id"]] = records[int(np.argmin(sims))]["smiles"]
    return out


def pretrain_set(codec: TaskCodec, records: Sequence[dict], stale: dict[str, str] | None = None) -> PretrainSet:
    stale = stale or {}
    pairs = []
    for r in records:
        tgt = stale.get(r["id"]) or codec.reference(r)
        pairs.append((codec.src_ids(codec.query(r)), codec.tgt_ids(tgt)))
    return PretrainSet(pairs, dict(stale))
