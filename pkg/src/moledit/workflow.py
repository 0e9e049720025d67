"""End-to-end steps shared by the command line and the acceptance suite."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .backbone import Model, ModelConfig, Vocab, encode, pretrain
from .bench import BenchmarkSplit, Pipeline
from .config import RunConfig, from_dict
from .eaes import input_means
from .editing import Ablation, EditorConfig, EditRequest, EditResult, EditSample, MolEditor
from .meka import AdapterConfig
from .tasks import PretrainSet, TaskCodec, build_vocabs, canonical_task, pretrain_set, stale_targets


def config_hash(data) -> str:
    return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:16]


def content_hash(paths: Sequence[str | Path]) -> str:
    """Git-style blob hash over the given files, in order."""
    h = hashlib.sha1()
    for p in paths:
        data = Path(p).read_bytes()
        h.update(f"blob {len(data)}\0".encode() + data)
    return h.hexdigest()


def model_config(cfg: RunConfig, codec: TaskCodec) -> ModelConfig:
    m = cfg.model
    return ModelConfig(len(codec.src_vocab), len(codec.tgt_vocab), m.d_model, m.n_enc_layers, m.n_dec_layers, m.ffn, m.max_len, cfg.seed)


@dataclass
class Pretrained:
    model: Model
    codec: TaskCodec
    data: PretrainSet
    losses: list[float]


def prepare(records: Sequence[dict], task: str, cfg: RunConfig) -> tuple[TaskCodec, PretrainSet]:
    task = canonical_task(task)
    src, tgt = build_vocabs(records, task)
    codec = TaskCodec(task, src, tgt)
    stale = stale_targets(records, task, cfg.pretrain.stale_fraction, cfg.seed)
    return codec, pretrain_set(codec, records, stale)


def pretrain_task(records: Sequence[dict], task: str, cfg: RunConfig, on_epoch=None, model: Model | None = None) -> Pretrained:
    codec, data = prepare(records, task, cfg)
    model = model or Model(model_config(cfg, codec))
    res = pretrain(model, data.pairs, cfg.pretrain.epochs, lr=cfg.pretrain.lr, seed=cfg.seed, on_epoch=on_epoch)
    return Pretrained(model, codec, data, res.losses)


def save_pretrained(p: Pretrained, path: str | Path, cfg: RunConfig) -> None:
    path = Path(path)
    nx.save_checkpoint(path, p.model.state_dict())
    p.codec.src_vocab.save(path.with_suffix(".src.vocab"))
    p.codec.tgt_vocab.save(path.with_suffix(".tgt.vocab"))
    meta = {
        "task": p.codec.task,
        "config": cfg.as_dict(),
        "config_hash": config_hash(cfg.as_dict()),
        "losses": p.losses,
        "stale": p.data.stale,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")


def load_pretrained(path: str | Path) -> tuple[Model, TaskCodec, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    codec = TaskCodec(meta["task"], Vocab.load(path.with_suffix(".src.vocab")), Vocab.load(path.with_suffix(".tgt.vocab")))
    model = Model(model_config(from_dict(meta["config"]), codec))
    model.load_state_dict(nx.load_checkpoint(path))
    return model, codec, meta


# ----------------------------------------------------------------------
def editor_config(cfg: RunConfig, task: str, ablation: Ablation | None = None, seed: int | None = None) -> EditorConfig:
    a = cfg.adapter
    acfg = AdapterConfig(
        d_model=cfg.model.d_model,
        n_experts=a.n_experts,
        top_k=a.top_k,
        lam=a.lam,
        gate_noise_std=a.gate_noise_std,
        gate_init_std=a.gate_init_std or None,
    )
    return EditorConfig(
        adapter=acfg,
        encoder_layer=a.encoder_layer,
        decoder_layer=a.decoder_layer,
        tau=cfg.tau(task),
        ablation=ablation or Ablation(),
        seed=cfg.seed if seed is None else seed,
    )


def edit_sample(codec: TaskCodec, record: dict) -> EditSample:
    q = codec.query(record)
    return EditSample(tuple(codec.src_ids(q)), q.segmentation, tuple(codec.tgt_ids(codec.reference(record))))


def edit_requests(codec: TaskCodec, edit_set: Sequence[dict], cfg: RunConfig) -> list[EditRequest]:
    per = cfg.samples_per_edit(codec.task)
    reqs = []
    for i in range(0, len(edit_set), per):
        samples = [edit_sample(codec, r) for r in edit_set[i : i + per]]
        reqs.append(EditRequest(codec.task, samples, cfg.edit.steps, cfg.edit_lr(codec.task), cfg.edit.stop_loss))
    return reqs


def run_edits(editor: MolEditor, codec: TaskCodec, edit_set: Sequence[dict], cfg: RunConfig) -> list[EditResult]:
    return [editor.apply_edit(req) for req in edit_requests(codec, edit_set, cfg)]


def editor_pipeline(editor: MolEditor, codec: TaskCodec, decisions: list | None = None) -> Pipeline:
    def run(sample: dict, text: str | None = None) -> str:
        q = codec.query(sample, text)
        out = editor.route(codec.src_ids(q), q.segmentation)
        if decisions is not None:
            decisions.append((sample["id"], out.decision))
        return codec.render(out.tokens)

    return run


# ----------------------------------------------------------------------
def activation_histogram(editor: MolEditor, codec: TaskCodec, records: Sequence[dict]) -> dict:
    """Expert usage over the routed segments (encoder) and tokens (decoder) of ``records``."""
    trace: list[dict] = []
    for r in records:
        q = codec.query(r)
        editor.generate_forced(codec.src_ids(q), q.segmentation, trace)
    n = editor.adapter_config.n_experts
    out = {}
    for a in editor.adapters.values():
        rows = [t["gates"] for t in trace if t["site"] == a.name]
        if a.kind == "encoder":
            # one encoder record per input; decoder records repeat per greedy step
            gates = np.concatenate(rows) if rows else np.zeros((0, n))
        else:
            gates = np.concatenate([g[-1:] for g in rows]) if rows else np.zeros((0, n))
        top = np.argmax(gates, axis=1) if len(gates) else np.zeros(0, dtype=int)
        out[a.name] = {
            "kind": a.kind,
            "histogram": np.bincount(top, minlength=n).tolist(),
            "routed": int(len(gates)),
            "max_nonzero": int(np.count_nonzero(gates, axis=1).max()) if len(gates) else 0,
        }
    return out


def switch_confusion(editor: MolEditor, codec: TaskCodec, edited: Sequence[dict], unrelated: Sequence[dict]) -> dict:
    """Switch decisions on inputs labelled edited (should fire) and unrelated (should not)."""
    counts = {"tp": 0, "fn": 0, "fp": 0, "tn": 0}
    for label, rows in ((True, edited), (False, unrelated)):
        for r in rows:
            q = codec.query(r)
            with nx.no_grad():
                z = encode(editor.model, codec.src_ids(q)).final
            active = editor.bank.decide(input_means(z, q.segmentation, editor.whole_input)).active
            key = ("tp" if active else "fn") if label else ("fp" if active else "tn")
            counts[key] += 1
    total = sum(counts.values())
    counts["accuracy"] = (counts["tp"] + counts["tn"]) / total if total else float("nan")
    return counts


def rationale_report(editor: MolEditor, codec: TaskCodec, split: BenchmarkSplit) -> dict:
    return {
        "activation": activation_histogram(editor, codec, split.edit),
        "switch": switch_confusion(editor, codec, split.edit, split.loc),
    }
