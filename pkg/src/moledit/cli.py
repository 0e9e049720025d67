"""``moledit`` command line: corpus, pretraining, benchmark, edits, evaluation, rationale."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import numerics as nx
from .backbone import EmptyCorpus
from .bench import BenchmarkSplit, EmptyResult, MissingPreEditCache, build_split, evaluate
from .chem import SmilesError
from .config import ConfigError, RunConfig, from_dict, load_config, override
from .corpus import generate_corpus, read_jsonl, write_jsonl
from .eaes import BankFormatError, ExpertiseMemoryBank
from .editing import Ablation, ConflictingFlags, MolEditor, write_edit_log
from .tasks import canonical_task
from .workflow import (
    config_hash,
    content_hash,
    editor_config,
    editor_pipeline,
    load_pretrained,
    pretrain_task,
    rationale_report,
    run_edits,
    save_pretrained,
)

log = logging.getLogger("moledit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 2, 3, 4


class InvariantViolation(RuntimeError):
    pass


DATA_ERRORS = (
    OSError,
    json.JSONDecodeError,
    nx.CheckpointError,
    BankFormatError,
    EmptyCorpus,
    EmptyResult,
    MissingPreEditCache,
    SmilesError,
    KeyError,
)


def _task(value: str) -> str:
    try:
        return canonical_task(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _ablation(value: str) -> Ablation:
    try:
        return Ablation.parse(value)
    except (ValueError, ConflictingFlags) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="moledit", description="Knowledge editing for toy molecule language models.")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads for numeric kernels")
    p.add_argument("--config", type=Path, default=None, help="TOML run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="config override, e.g. edit.lr_mol=1e-4")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="write the synthetic molecule-caption corpus")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--size", type=int, default=200)

    t = sub.add_parser("pretrain", help="train the toy backbone for one task")
    t.add_argument("--corpus", type=Path, required=True)
    t.add_argument("--task", type=_task, required=True)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--resume", action="store_true", help="continue from --out if it exists")

    b = sub.add_parser("bench-build", help="build edit, locality and generality sets")
    b.add_argument("--model", type=Path, required=True)
    b.add_argument("--corpus", type=Path, required=True)
    b.add_argument("--task", type=_task, required=True)
    b.add_argument("--out", type=Path, required=True)

    e = sub.add_parser("edit", help="apply the edit set sequentially")
    e.add_argument("--model", type=Path, required=True)
    e.add_argument("--bench", type=Path, required=True)
    e.add_argument("--task", type=_task, required=True)
    e.add_argument("--ablate", type=_ablation, default=Ablation(), help="comma-separated: no_meka,no_eaes,encoder_only,decoder_only")
    e.add_argument("--out", type=Path, required=True)

    v = sub.add_parser("eval", help="score an edited model on a benchmark split")
    v.add_argument("--edited", type=Path, required=True)
    v.add_argument("--bench", type=Path, required=True)
    v.add_argument("--task", type=_task, required=True)
    v.add_argument("--report", type=Path, required=True)

    r = sub.add_parser("rationale", help="expert activation histogram and switch confusion counts")
    r.add_argument("--edited", type=Path, required=True)
    r.add_argument("--report", type=Path, required=True)
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    for item in args.overrides:
        cfg = override(cfg, item)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _write_json(path: Path, data: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable), encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


# ----------------------------------------------------------------------
def cmd_gen_corpus(args, cfg: RunConfig) -> int:
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(args.out, generate_corpus(args.size, cfg.seed))
    return EXIT_OK


def cmd_pretrain(args, cfg: RunConfig) -> int:
    records = read_jsonl(args.corpus)
    start = None
    if args.resume and args.out.exists():
        model, codec, meta = load_pretrained(args.out)
        if meta["config_hash"] != config_hash(cfg.as_dict()) or meta["task"] != args.task:
            log.error("cannot resume %s: checkpoint config hash %s differs from %s", args.out, meta["config_hash"], config_hash(cfg.as_dict()))
            return EXIT_DATA
        start = model
    res = pretrain_task(records, args.task, cfg, on_epoch=lambda e, loss: log.info("epoch %d loss %.5f", e, loss), model=start)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_pretrained(res, args.out, cfg)
    return EXIT_OK


def cmd_bench_build(args, cfg: RunConfig) -> int:
    model, codec, meta = load_pretrained(args.model)
    _check_task(meta, args.task)
    records = read_jsonl(args.corpus)
    b = cfg.bench
    try:
        split = build_split(model, records, codec, b.low, b.high, b.loc_size, b.gen_variants, b.max_edits or None)
    except EmptyResult as exc:
        print(f"error: {exc}", file=sys.stderr)
        for bin_, count in exc.histogram.items():
            print(f"  {bin_}: {count}", file=sys.stderr)
        return EXIT_DATA
    split.provenance.update({"model": str(args.model), "corpus": str(args.corpus), "config": cfg.as_dict()})
    split.save(args.out)
    return EXIT_OK


def _check_task(meta: dict, task: str) -> None:
    if meta["task"] != task:
        raise ValueError(f"model was pretrained for task {meta['task']!r}, not {task!r}")


def cmd_edit(args, cfg: RunConfig) -> int:
    model, codec, meta = load_pretrained(args.model)
    _check_task(meta, args.task)
    split = BenchmarkSplit.load(args.bench)
    before = model.backbone_checksum()
    editor = MolEditor(model, editor_config(cfg, args.task, args.ablate))
    results = run_edits(editor, codec, split.edit, cfg)
    if model.backbone_checksum() != before:
        raise InvariantViolation("backbone parameters changed during editing")
    args.out.mkdir(parents=True, exist_ok=True)
    write_edit_log(args.out / "edits.jsonl", [r.log_record(args.task) for r in results])
    nx.save_checkpoint(args.out / "adapters.mekt", editor.state_dict())
    editor.bank.save(args.out / "bank.mekb")
    _write_json(
        args.out / "editor.json",
        {
            "model": str(args.model.resolve()),
            "bench": str(args.bench.resolve()),
            "task": args.task,
            "ablation": args.ablate.names,
            "config": cfg.as_dict(),
            "backbone_checksum": before,
        },
    )
    return EXIT_OK


def load_editor(edited: Path) -> tuple[MolEditor, object, dict, RunConfig]:
    info = json.loads((edited / "editor.json").read_text(encoding="utf-8"))
    cfg = from_dict(info["config"])
    model, codec, _ = load_pretrained(info["model"])
    if model.backbone_checksum() != info["backbone_checksum"]:
        raise InvariantViolation("pretrained checkpoint differs from the one that was edited")
    editor = MolEditor(model, editor_config(cfg, info["task"], Ablation.parse(info["ablation"])))
    editor.load_state_dict(nx.load_checkpoint(edited / "adapters.mekt"))
    editor.bank = ExpertiseMemoryBank.load(edited / "bank.mekb")
    return editor, codec, info, cfg


def cmd_eval(args, cfg: RunConfig) -> int:
    editor, codec, info, edit_cfg = load_editor(args.edited)
    if info["task"] != args.task:
        raise ValueError(f"edits were made for task {info['task']!r}, not {args.task!r}")
    split = BenchmarkSplit.load(args.bench)
    report = evaluate(editor_pipeline(editor, codec), split, codec)
    inputs = [args.bench / n for n in ("edit.jsonl", "loc.jsonl", "gen.jsonl", "split.json")]
    inputs += [args.edited / n for n in ("adapters.mekt", "bank.mekb")]
    _write_json(args.report, {**report.as_dict(), "config": edit_cfg.as_dict(), "ablation": info["ablation"], "input_hash": content_hash(inputs)})
    return EXIT_OK


def cmd_rationale(args, cfg: RunConfig) -> int:
    editor, codec, info, edit_cfg = load_editor(args.edited)
    split = BenchmarkSplit.load(info["bench"])
    report = rationale_report(editor, codec, split)
    _write_json(args.report, {**report, "config": edit_cfg.as_dict(), "ablation": info["ablation"]})
    return EXIT_OK


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "pretrain": cmd_pretrain,
    "bench-build": cmd_bench_build,
    "edit": cmd_edit,
    "eval": cmd_eval,
    "rationale": cmd_rationale,
}


def _limit_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))
    import numba

    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    _limit_threads(args.threads)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (*DATA_ERRORS, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
