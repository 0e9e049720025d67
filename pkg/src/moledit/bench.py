"""Benchmark construction (edit, locality and generality sets) and evaluation."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .backbone import Model, generate
from .chem import SmilesError, fingerprint, read_smiles, smiles_tokens_lenient, tanimoto
from .corpus import read_jsonl, write_jsonl
from .metrics import bleu_n, normalized_levenshtein, text_tokens
from .tasks import CAPTION, MOLECULE, TaskCodec
from .textseg import rewrite

log = logging.getLogger(__name__)

DEFAULT_LOW = 0.2
DEFAULT_HIGH = 0.95

Pipeline = Callable[[dict, str | None], str]  # (sample, optional input override) -> output text


class EmptyResult(ValueError):
    def __init__(self, message: str, histogram: dict[str, int] | None = None):
        super().__init__(message)
        self.histogram = histogram or {}


class MissingPreEditCache(KeyError):
    pass


def score_histogram(scores: Sequence[float], bins: int = 10) -> dict[str, int]:
    counts, edges = np.histogram(np.clip(scores, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    return {f"{edges[i]:.1f}-{edges[i + 1]:.1f}": int(c) for i, c in enumerate(counts)}


def model_pipeline(model: Model, codec: TaskCodec) -> Pipeline:
    def run(sample: dict, text: str | None = None) -> str:
        q = codec.query(sample, text)
        return codec.render(generate(model, codec.src_ids(q)))

    return run


def model_outputs(model: Model, codec: TaskCodec, records: Sequence[dict]) -> dict[str, str]:
    run = model_pipeline(model, codec)
    return {r["id"]: run(r, None) for r in records}


def primary_scores(outputs: Mapping[str, str], records: Sequence[dict], codec: TaskCodec) -> dict[str, float]:
    metric = codec.selection_metric
    return {r["id"]: codec.similarity(outputs[r["id"]], codec.reference(r))[metric] for r in records}


def _as_output_maps(models, codec: TaskCodec, records: Sequence[dict]) -> list[Mapping[str, str]]:
    if isinstance(models, (Model, Mapping)):
        models = [models]
    return [m if isinstance(m, Mapping) else model_outputs(m, codec, records) for m in models]


def _with_target(r: dict, codec: TaskCodec) -> dict:
    out = dict(r)
    key = "target_caption" if codec.task == CAPTION else "target_smiles"
    out.setdefault(key, codec.reference(r))
    return out


def build_edit_set(models, corpus: Sequence[dict], codec: TaskCodec, low: float = DEFAULT_LOW) -> list[dict]:
    """Samples every model gets wrong (primary score below ``low``).

    ``models`` is a model, a precomputed ``id -> output`` map, or a list of
    either; with several, a sample must fall below ``low`` for all of them.
    """
    maps = _as_output_maps(models, codec, corpus)
    per_model = [primary_scores(m, corpus, codec) for m in maps]
    keep = [r for r in corpus if all(s[r["id"]] < low for s in per_model)]
    if not keep:
        raise EmptyResult(f"no sample scores below {low}", score_histogram([max(s[r["id"]] for s in per_model) for r in corpus]))
    return [_with_target(r, codec) for r in keep]


def _caption_bleu2(a: str, b: str) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return bleu_n(text_tokens(a), text_tokens(b), n=2)


def edit_affinity(samples: Sequence[dict], edit_set: Sequence[dict], task: str) -> list[float]:
    """Highest similarity of each sample to any edit-set member."""
    if task == MOLECULE:
        efps = [fingerprint(read_smiles(e["smiles"])) for e in edit_set]
        return [max(tanimoto(fingerprint(read_smiles(s["smiles"])), f) for f in efps) for s in samples]
    return [max(_caption_bleu2(s["caption"], e["caption"]) for e in edit_set) for s in samples]


def build_loc_set(
    models,
    corpus: Sequence[dict],
    codec: TaskCodec,
    edit_set: Sequence[dict],
    high: float = DEFAULT_HIGH,
    size: int = 20,
) -> list[dict]:
    """Well-handled samples most similar to the edit set, excluding its members."""
    maps = _as_output_maps(models, codec, corpus)
    per_model = [primary_scores(m, corpus, codec) for m in maps]
    edit_ids = {e["id"] for e in edit_set}
    edit_smiles = {e["smiles"] for e in edit_set}
    pool = [
        r for r in corpus
        if r["id"] not in edit_ids and r["smiles"] not in edit_smiles and all(s[r["id"]] > high for s in per_model)
    ]
    if not pool:
        raise EmptyResult(f"no sample scores above {high}", score_histogram([min(s[r["id"]] for s in per_model) for r in corpus]))
    if size > len(pool):
        warnings.warn(f"locality pool has {len(pool)} samples, fewer than the requested {size}", stacklevel=2)
    aff = edit_affinity(pool, edit_set, codec.task)
    order = sorted(range(len(pool)), key=lambda i: (-aff[i], pool[i]["id"]))
    return [pool[i] for i in order[:size]]


def build_gen_set(edit_set: Sequence[dict], variants: int = 1) -> list[dict]:
    """Caption paraphrases of the edit set, keyed by (parent id, variant seed)."""
    out = []
    for e in edit_set:
        for seed in range(variants):
            rw = rewrite(e["caption"], seed)
            out.append(
                {
                    "id": f"{e['id']}~{seed}",
                    "parent_id": e["id"],
                    "variant_seed": seed,
                    "smiles": e["smiles"],
                    "caption": rw.text,
                    "target_smiles": e.get("target_smiles") or e["smiles"],
                    "identity_fallback": rw.no_rewrite,
                }
            )
    return out


@dataclass
class BenchmarkSplit:
    task: str
    edit: list[dict]
    loc: list[dict]
    gen: list[dict] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    pre_edit: dict[str, str] = field(default_factory=dict)  # locality id -> unedited output

    def __post_init__(self):
        overlap = {e["id"] for e in self.edit} & {r["id"] for r in self.loc}
        if overlap:
            raise ValueError(f"edit and locality sets share samples {sorted(overlap)}")

    def save(self, out_dir: str | Path) -> None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        write_jsonl(d / "edit.jsonl", self.edit)
        write_jsonl(d / "loc.jsonl", self.loc)
        write_jsonl(d / "gen.jsonl", self.gen)
        meta = {"task": self.task, "provenance": self.provenance, "pre_edit": self.pre_edit}
        (d / "split.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, out_dir: str | Path) -> BenchmarkSplit:
        d = Path(out_dir)
        meta = json.loads((d / "split.json").read_text(encoding="utf-8"))
        return cls(
            meta["task"],
            read_jsonl(d / "edit.jsonl"),
            read_jsonl(d / "loc.jsonl"),
            read_jsonl(d / "gen.jsonl"),
            meta.get("provenance", {}),
            meta.get("pre_edit", {}),
        )


def build_split(
    model: Model,
    corpus: Sequence[dict],
    codec: TaskCodec,
    low: float = DEFAULT_LOW,
    high: float = DEFAULT_HIGH,
    loc_size: int = 20,
    gen_variants: int = 1,
    max_edits: int | None = None,
) -> BenchmarkSplit:
    outputs = model_outputs(model, codec, corpus)
    edit = build_edit_set(outputs, corpus, codec, low)
    if max_edits is not None:
        edit = edit[:max_edits]
    loc = build_loc_set(outputs, corpus, codec, edit, high, loc_size)
    gen = build_gen_set(edit, gen_variants) if codec.task == MOLECULE else []
    prov = {"low": low, "high": high, "loc_size": loc_size, "gen_variants": gen_variants, "corpus_size": len(corpus)}
    return BenchmarkSplit(codec.task, edit, loc, gen, prov, {r["id"]: outputs[r["id"]] for r in loc})


# ----------------------------------------------------------------------
@dataclass
class EvalReport:
    task: str
    tables: dict[str, dict[str, dict[str, float]]]  # dimension -> metric -> {mean, std}
    counts: dict[str, int]
    per_sample: dict[str, list[dict]]

    def mean(self, dimension: str, metric: str) -> float:
        return self.tables[dimension][metric]["mean"]

    def as_dict(self) -> dict:
        return {"task": self.task, "tables": self.tables, "counts": self.counts, "per_sample": self.per_sample}


def _table(rows: list[dict]) -> dict[str, dict[str, float]]:
    if not rows:
        return {}
    keys = [k for k in rows[0] if k != "id"]
    out = {}
    for k in keys:
        vals = np.array([float(r[k]) for r in rows])
        out[k] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    return out


def evaluate(pipeline: Pipeline, split: BenchmarkSplit, codec: TaskCodec, pre_edit: Mapping[str, str] | None = None) -> EvalReport:
    """Reliability against targets, locality against pre-edit outputs, generality on paraphrases."""
    pre_edit = split.pre_edit if pre_edit is None else pre_edit
    missing = [r["id"] for r in split.loc if r["id"] not in pre_edit]
    if missing:
        raise MissingPreEditCache(f"no cached pre-edit output for locality samples {missing[:5]}")
    per: dict[str, list[dict]] = {"reliability": [], "locality": [], "generality": []}
    for r in split.edit:
        per["reliability"].append({"id": r["id"], **codec.similarity(pipeline(r, None), codec.reference(r))})
    for r in split.loc:
        per["locality"].append({"id": r["id"], **_self_similarity(codec, pipeline(r, None), pre_edit[r["id"]])})
    if codec.task == MOLECULE:
        for r in split.gen:
            per["generality"].append({"id": r["id"], **codec.similarity(pipeline(r, r["caption"]), r["target_smiles"])})
    tables = {k: _table(v) for k, v in per.items() if v}
    return EvalReport(codec.task, tables, {k: len(v) for k, v in per.items()}, per)


def _self_similarity(codec: TaskCodec, candidate: str, reference: str) -> dict[str, float]:
    """Similarity to a pre-edit output, which may itself be an invalid molecule."""
    if codec.task == MOLECULE:
        try:
            read_smiles(reference)
        except SmilesError:
            # an invalid pre-edit output still supports string-level comparison
            cand, ref = smiles_tokens_lenient(candidate), smiles_tokens_lenient(reference)
            same = float(candidate == reference)
            return {
                "bleu4": bleu_n(cand, ref, n=4) if cand and ref else same,
                "lev_norm": normalized_levenshtein(candidate, reference),
                "fp_tanimoto": same,
                "candidate_valid": 0.0,
            }
    return codec.similarity(candidate, reference)
