"""Acceptance criteria 1-9 at toy scale; each test prints one PASS/FAIL line."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import pytest

from moledit import numerics as nx
from moledit.backbone import generate
from moledit.bench import BenchmarkSplit, EvalReport, build_split, evaluate, model_outputs
from moledit.chem import detect_functional_groups, group_token_spans, read_smiles, tokenize_smiles
from moledit.config import RunConfig, override
from moledit.corpus import generate_corpus, random_molecule
from moledit.eaes import ExpertiseMemoryBank, input_means
from moledit.editing import Ablation, MolEditor
from moledit.expertise import ExpertiseSegmentation
from moledit.metrics import bleu_n, meteor_lite, normalized_levenshtein, rouge1
from moledit.tasks import smiles_query
from moledit.workflow import (
    activation_histogram,
    config_hash,
    edit_requests,
    edit_sample,
    editor_config,
    editor_pipeline,
    load_pretrained,
    pretrain_task,
    run_edits,
    save_pretrained,
)

from .helpers import all_strings, edit_distances_from, random_tree_smiles
from .test_numerics import OPS

# Toy-scale settings on top of the defaults; the reasons are in the decisions ledger.
TOY = ["edit.lr_mol=1e-4", "adapter.gate_noise_std=1.0", "edit.stop_loss=1e-4"]
PRETRAIN_EPOCHS = {"cap": 40, "mol": 80}


def toy_config(task: str) -> RunConfig:
    cfg = RunConfig()
    for item in [*TOY, f"pretrain.epochs={PRETRAIN_EPOCHS[task]}"]:
        cfg = override(cfg, item)
    return cfg


def verdict(capsys, n: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


# --- shared state -------------------------------------------------------------------------
CORPUS = generate_corpus(200, seed=0)


@dataclass
class Setup:
    cfg: RunConfig
    model: object
    codec: object
    split: BenchmarkSplit
    pretrain_seconds: float


@pytest.fixture(scope="session")
def setups(pytestconfig):
    """Pretrained toy backbones, cached across sessions by their pretraining settings."""
    cache = pytestconfig.cache.mkdir("moledit-pretrained")
    out = {}

    def get(task: str) -> Setup:
        if task in out:
            return out[task]
        cfg = toy_config(task)
        key = config_hash({"task": task, "model": cfg.as_dict()["model"], "pretrain": cfg.as_dict()["pretrain"], "seed": cfg.seed})
        path = cache / f"{task}-{key}.mekt"
        t0 = time.perf_counter()
        if not path.exists():
            save_pretrained(pretrain_task(CORPUS, task, cfg), path, cfg)
        model, codec, meta = load_pretrained(path)
        b = cfg.bench
        split = build_split(model, CORPUS, codec, b.low, b.high, b.loc_size, b.gen_variants, b.max_edits)
        out[task] = Setup(cfg, model, codec, split, time.perf_counter() - t0)
        return out[task]

    return get


@dataclass
class Edited:
    editor: MolEditor
    report: EvalReport
    decisions: dict
    edit_seconds: float
    eval_seconds: float


def edit_and_evaluate(s: Setup, ablation: Ablation | None = None, seed: int = 0) -> Edited:
    editor = MolEditor(s.model.copy(), editor_config(s.cfg, s.codec.task, ablation, seed))
    t0 = time.perf_counter()
    run_edits(editor, s.codec, s.split.edit, s.cfg)
    t1 = time.perf_counter()
    log: list = []
    report = evaluate(editor_pipeline(editor, s.codec, log), s.split, s.codec)
    return Edited(editor, report, dict(log), t1 - t0, time.perf_counter() - t1)


@pytest.fixture(scope="session")
def edited(setups):
    out = {}

    def get(task: str) -> Edited:
        if task not in out:
            out[task] = edit_and_evaluate(setups(task))
        return out[task]

    return get


# --- 1 -------------------------------------------------------------------------------------
def test_criterion_1_zero_adapter_identity(setups, capsys):
    mismatches, seconds = 0, 0.0
    for task in ("cap", "mol"):
        s = setups(task)
        plain = model_outputs(s.model, s.codec, CORPUS)
        t0 = time.perf_counter()
        editor = MolEditor(s.model.copy(), editor_config(s.cfg, task))
        for r in CORPUS:
            q = s.codec.query(r)
            mismatches += s.codec.render(editor.generate_forced(s.codec.src_ids(q), q.segmentation)) != plain[r["id"]]
        seconds = max(seconds, time.perf_counter() - t0)
    ok = mismatches == 0 and seconds < 30
    verdict(capsys, 1, ok, f"mismatches={mismatches} over 2x{len(CORPUS)} samples, slowest task {seconds:.1f}s (limit 30s)")
    assert ok


# --- 2 -------------------------------------------------------------------------------------
def test_criterion_2_gate_closed_locality(setups, edited, capsys):
    lines, ok = [], True
    for task in ("mol", "cap"):
        s, e = setups(task), edited(task)
        metric = s.codec.reliability_metric
        closed = [row for row in e.report.per_sample["locality"] if not e.decisions[row["id"]].active]
        exact = all(row[metric] == 1.0 and row.get("lev_norm", 0.0) == 0.0 for row in closed)
        # every closed input across the corpus, not only the locality set, decodes like the plain model
        edited_ids = {r["id"] for r in s.split.edit}
        t0 = time.perf_counter()
        n_closed = drift = 0
        for r in CORPUS:
            if r["id"] in edited_ids:
                continue
            q = s.codec.query(r)
            src = s.codec.src_ids(q)
            out = e.editor.route(src, q.segmentation)
            if not out.decision.active:
                n_closed += 1
                drift += out.tokens != generate(s.model, src)
        seconds = e.edit_seconds + e.eval_seconds
        ok &= exact and drift == 0 and (task != "mol" or seconds < 120)
        lines.append(
            f"{task}: closed loc {len(closed)}/{len(e.report.per_sample['locality'])} exact={exact}, "
            f"closed corpus inputs {n_closed} drift={drift}, edit+eval {seconds:.0f}s"
        )
    verdict(capsys, 2, ok, "; ".join(lines) + " (limit 120s for 10 mol edits)")
    assert ok


# --- 3 -------------------------------------------------------------------------------------
def test_criterion_3_toy_reliability(setups, edited, capsys):
    goals = {"cap": ("bleu2", 0.95), "mol": ("bleu4", 0.90)}
    lines, ok = [], True
    for task, (metric, goal) in goals.items():
        s, e = setups(task), edited(task)
        rel = e.report.mean("reliability", metric)
        seconds = e.edit_seconds + e.eval_seconds
        ok &= rel >= goal and seconds < 600 and len(s.split.edit) == 10
        lines.append(
            f"{task}: reliability {metric}={rel:.3f} (goal {goal}), locality={e.report.mean('locality', metric):.3f}, "
            f"{len(s.split.edit)} edits, edit+eval {seconds:.0f}s, pretrain/load {s.pretrain_seconds:.0f}s"
        )
    verdict(capsys, 3, ok, "; ".join(lines) + " (limit 600s)")
    assert ok


# --- 4 -------------------------------------------------------------------------------------
def test_criterion_4_ablation_ordering(setups, edited, capsys):
    s = setups("mol")
    metric = s.codec.reliability_metric
    res = {"full": [], "no_eaes": [], "no_meka": []}
    for seed in range(5):
        full = edited("mol") if seed == s.cfg.seed else edit_and_evaluate(s, seed=seed)
        res["full"].append(full.report)
        # without the switch the adapters train exactly as in the full run, so they are reused
        # and only the whole-input bank is rebuilt from zero-step edits
        no_eaes = MolEditor(s.model.copy(), editor_config(s.cfg, "mol", Ablation(no_eaes=True), seed))
        no_eaes.load_state_dict(full.editor.state_dict())
        for req in edit_requests(s.codec, s.split.edit, s.cfg):
            req.steps = 0
            no_eaes.apply_edit(req)
        res["no_eaes"].append(evaluate(editor_pipeline(no_eaes, s.codec), s.split, s.codec))
        res["no_meka"].append(edit_and_evaluate(s, Ablation(no_meka=True), seed).report)
    mean = {k: {d: float(np.mean([r.mean(d, metric) for r in v])) for d in ("reliability", "locality")} for k, v in res.items()}
    ok = mean["full"]["locality"] >= mean["no_eaes"]["locality"] and mean["full"]["reliability"] >= mean["no_meka"]["reliability"]
    summary = ", ".join(f"{k} rel={m['reliability']:.3f} loc={m['locality']:.3f}" for k, m in mean.items())
    verdict(capsys, 4, ok, f"mol {metric} over 5 seeds: {summary}")
    assert ok


# --- 5 -------------------------------------------------------------------------------------
def test_criterion_5_gradients(setups, capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = {}
    for name, op in OPS.items():
        a, b = (nx.Tensor(rng.normal(size=(2, 3)), requires_grad=True) for _ in range(2))
        worst[name] = nx.fd_check(lambda: nx.mean(op(a, b)), [a, b])
    s = setups("mol")
    editor = MolEditor(s.model.copy(), editor_config(s.cfg, "mol"))
    for p in editor.parameters():
        p.data = p.data + rng.normal(scale=0.05, size=p.data.shape)
    samples = [edit_sample(s.codec, r) for r in s.split.edit[:1]]
    frozen = list(editor.model.params.values())
    for t in frozen:
        t.requires_grad = False
    worst["edit step"] = nx.fd_check(lambda: editor.edit_loss(samples, training=False), editor.parameters())
    seconds = time.perf_counter() - t0
    top = max(worst, key=worst.get)
    ok = max(worst.values()) <= 1e-4 and seconds < 60
    verdict(capsys, 5, ok, f"{len(OPS)} ops + edit step, max rel err {worst[top]:.2e} ({top}), {seconds:.1f}s (limit 60s)")
    assert ok


# --- 6 -------------------------------------------------------------------------------------
FIXTURES = [
    (lambda: bleu_n(["A", "B"], ["A", "C"], n=1, smoothing=False), 0.5),
    (lambda: bleu_n(["a", "b"], ["a", "b", "c"], n=1), math.exp(1 - 3 / 2)),
    (lambda: bleu_n(list("abc"), list("acb"), n=2), math.sqrt(1 / 3)),
    (lambda: bleu_n(["A", "B"], ["A", "B", "C"], n=4, smoothing=False), 0.0),
    (lambda: rouge1(["A", "A"], ["A", "B"]), 0.5),
    (lambda: meteor_lite(["a", "b"], ["a", "b"]), 0.9375),
    (lambda: meteor_lite(["the", "cat", "sat"], ["the", "sat", "cat"]), 0.5),
    (lambda: meteor_lite(["a", "z"], ["a"]), 0.5 / (0.9 * 0.5 + 0.1) * 0.5),
]


def test_criterion_6_metric_oracles(capsys):
    alphabet = "CNO()"
    strings = all_strings(alphabet, 6)
    rng = np.random.default_rng(0)
    # exhaustive over every pair up to length 3, then every target up to length 6 from sampled sources
    sources = [(s, 3) for s in all_strings(alphabet, 3)]
    picks = [strings[int(i)] for i in rng.choice(len(strings), 20, replace=False)]
    sources += [(s, 6) for s in ["", "((((((", "CNO()C", *picks]]
    pairs = bad = 0
    for a, bound in sources:
        dist = edit_distances_from(a, alphabet, bound)
        for b in (s for s in strings if len(s) <= bound):
            expected = 0.0 if not a and not b else dist[b] / max(len(a), len(b))
            pairs += 1
            bad += abs(normalized_levenshtein(a, b) - expected) > 1e-12
    fixture_err = max(abs(f() - v) for f, v in FIXTURES)
    ok = bad == 0 and fixture_err <= 1e-9
    verdict(capsys, 6, ok, f"levenshtein {pairs} pairs, {bad} wrong; {len(FIXTURES)} text-metric fixtures, max err {fixture_err:.1e}")
    assert ok


# --- 7 -------------------------------------------------------------------------------------
def _unit(v):
    return v / np.linalg.norm(v)


def _near(rng, v, cos):
    """A vector at exactly the given cosine to ``v``."""
    u = _unit(v)
    w = rng.normal(size=v.shape)
    w = _unit(w - (w @ u) * u)
    return cos * u + math.sqrt(1 - cos**2) * w


def test_criterion_7_switch(capsys):
    rng = np.random.default_rng(0)
    d, n_seg, tau = 64, 5, 0.9
    bank = ExpertiseMemoryBank(tau=tau)
    stored = [list(rng.normal(size=(n_seg, d))) for _ in range(10)]
    for i, means in enumerate(stored):
        bank.register_edit(i, means)
    # edited queries sit at cosine 0.95 to their edit, unrelated ones at most 0.65 to anything
    edited = [[_near(rng, m, 0.95) for m in means] for means in stored]
    unrelated = []
    while len(unrelated) < 40:
        q = [_near(rng, stored[int(rng.integers(10))][j], 0.6) for j in range(n_seg)]
        if all(max(float(_unit(v) @ _unit(e.embedding)) for e in bank.entries) <= 0.65 for v in q):
            unrelated.append(q)
    hits = sum(bank.decide(q).active for q in edited) + sum(not bank.decide(q).active for q in unrelated)
    accuracy = hits / (len(edited) + len(unrelated))

    # token matrices with five segments; queries copy an edit but swap one expertise for an unrelated one
    seg = ExpertiseSegmentation.from_assignment([f"e{j}" for j in range(n_seg)], np.repeat(np.arange(n_seg), 4))
    edits = [rng.normal(size=(4 * n_seg, d)) for _ in range(6)]
    aware, whole = ExpertiseMemoryBank(tau=tau), ExpertiseMemoryBank(tau=tau)
    for i, z in enumerate(edits):
        aware.register_edit(i, input_means(z, seg))
        whole.register_edit(i, input_means(z, seg, whole_input=True))
    cases = [(z, True) for z in edits]
    for z in edits:
        q = z.copy()
        j = int(rng.integers(n_seg))
        q[4 * j : 4 * j + 4] = rng.normal(scale=0.3, size=(4, d))
        cases.append((q, False))
    acc_aware = np.mean([aware.decide(input_means(z, seg)).active == want for z, want in cases])
    acc_whole = np.mean([whole.decide(input_means(z, seg, whole_input=True)).active == want for z, want in cases])
    ok = accuracy >= 0.9 and acc_aware > acc_whole
    verdict(capsys, 7, ok, f"margin fixture accuracy {accuracy:.3f} (goal 0.9); one-mismatch fixture expertise-wise {acc_aware:.3f} vs whole-input {acc_whole:.3f}")
    assert ok


# --- 8 -------------------------------------------------------------------------------------
def _group_types(smiles: str) -> set[str]:
    return set(smiles_query(smiles).segmentation.labels) - {"backbone"}


def test_criterion_8_gate_sparsity(setups, capsys):
    s = setups("cap")
    assert s.cfg.adapter.n_experts == 5
    # the failing edit set, topped up with corpus samples until five group types are covered
    mixed = list(s.split.edit)
    types = set().union(*(_group_types(r["smiles"]) for r in mixed))
    for r in CORPUS:
        if len(types) >= 5 and len(mixed) % 2 == 0:
            break
        new = _group_types(r["smiles"]) - types
        if new and r not in mixed:
            mixed.append(r)
            types |= new
    editor = MolEditor(s.model.copy(), editor_config(s.cfg, "cap"))
    run_edits(editor, s.codec, mixed, s.cfg)
    hist = activation_histogram(editor, s.codec, mixed)
    enc = next(h for h in hist.values() if h["kind"] == "encoder")
    sparse = all(h["max_nonzero"] <= s.cfg.adapter.top_k for h in hist.values())
    ok = sparse and len(types) >= 5 and min(enc["histogram"]) >= 1
    detail = ", ".join(f"{name} {h['histogram']}" for name, h in hist.items())
    verdict(capsys, 8, ok, f"{len(mixed)} edits over {len(types)} group types; <=k nonzeros: {sparse}; top-expert counts {detail}")
    assert ok


# --- 9 -------------------------------------------------------------------------------------
def test_criterion_9_parser_suite(capsys):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    failures = 0
    for _ in range(1000):
        smiles, n_atoms, n_bonds = random_tree_smiles(rng)
        g = read_smiles(smiles)
        failures += (g.n_atoms, len(g.bonds)) != (n_atoms, n_bonds)
        failures += "".join(tokenize_smiles(smiles).lexemes) != smiles

        mol = random_molecule(rng).smiles
        failures += "".join(tokenize_smiles(mol).lexemes) != mol
        g = read_smiles(mol)
        groups = detect_functional_groups(g)
        atoms = sorted(a for _, atom_set in groups.segments for a in atom_set)
        failures += atoms != list(range(g.n_atoms))
        spans = group_token_spans(g, groups)  # construction checks the token partition
        failures += spans.n_tokens != len(g.tokens)
    seconds = time.perf_counter() - t0
    ok = failures == 0 and seconds < 30
    verdict(capsys, 9, ok, f"1000 tree SMILES + 1000 corpus molecules, {failures} failures, {seconds:.1f}s (limit 30s)")
    assert ok
