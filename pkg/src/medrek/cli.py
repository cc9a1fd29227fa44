"""Command-line pipeline around the editing library.

The subcommands cover the whole loop: synthesize a closed-world
dataset, clean and inspect it, pretrain the language model on its
corpus, train the editor against the frozen model, then query, score,
and audit the result. Commands that write files put everything in one
output directory along with a manifest of content hashes; `medrek
verify` re-checks those hashes later. Inputs are fully validated
before any output path is created, so a failed run leaves no
half-written directory behind.

Exit codes: 0 success, 2 usage, 3 missing or unreadable files,
4 invalid data or configuration, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .config import SPLITS, RunConfig, config_to_dict, load_config
from .dataset import (
    build_vocab,
    clean_overlaps,
    generate_synthetic,
    load_records,
    save_records,
    subject_stats,
)
from .diagnostics import classify_retrievals, high_sim_stats, outcome_counts, outcome_csv
from .errors import IoError, MedrekError, ValidationError
from .evaluation import metrics_csv, outcome_lines, report_json, run_protocol
from .figures import (
    plot_loss_curve,
    plot_metrics_by_batch,
    plot_outcome_scatter,
    plot_overlap_bars,
)
from .lm import CausalLM, pretrain
from .manifest import load_manifest, start_manifest, verify_manifest, write_manifest
from .system import MedrekSystem, checkpoint_summary
from .training import train, write_loss_csv


# ---------------------------------------------------------------------------
# Shared plumbing


def _config_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH|NAME", help="JSON config file or built-in name (e.g. desk50)")
    p.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
        help="override one config value; repeatable",
    )
    p.add_argument("--seed", type=int, help="override every seed in the config")


def _resolve_config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides=overrides)


def _prepare_out(out_dir: str) -> None:
    if os.path.isfile(out_dir):
        raise IoError(f"output path is a file: {out_dir}")
    os.makedirs(out_dir, exist_ok=True)


def _write_text(manifest, out_dir: str, name: str, text: str) -> str:
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    manifest.add_output(path)
    return path


def _write_json(manifest, out_dir: str, name: str, payload) -> str:
    return _write_text(manifest, out_dir, name, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_editor(editor_path: str, lm_path: str) -> MedrekSystem:
    lm = CausalLM.load(lm_path)
    return MedrekSystem.load(editor_path, lm)


def _split_records(records, split: str):
    if split == "all":
        return records
    subset = [r for r in records if r.split == split]
    if not subset:
        raise ValidationError(f"no records in split '{split}'")
    return subset


def _usable_batches(sizes, n: int) -> list[int]:
    usable = [b for b in sizes if b <= n]
    dropped = [b for b in sizes if b > n]
    if dropped:
        print(f"note: skipping batch sizes {dropped}; the split holds only {n} records", file=sys.stderr)
    if not usable:
        raise ValidationError(f"every configured batch size exceeds the {n} available records")
    return usable


def _eval_arguments(p: argparse.ArgumentParser) -> None:
    p.add_argument("--editor", required=True, help="editor checkpoint")
    p.add_argument("--lm", required=True, help="language model snapshot")
    p.add_argument("--data", required=True, help="records JSONL file")
    p.add_argument("--split", choices=SPLITS, help="record split to score (default from config)")
    p.add_argument("--batch-sizes", help="comma-separated edits-per-batch list (default from config)")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.add_argument("--out", required=True, help="output directory")


def _parse_batch_sizes(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise ValidationError(f"--batch-sizes must be comma-separated integers, got {text!r}") from None
    return sizes


# ---------------------------------------------------------------------------
# Commands


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    world = generate_synthetic(cfg.data)
    _prepare_out(args.out)
    manifest = start_manifest("gen-data", cfg.seed, config_to_dict(cfg), args.out)
    records_path = os.path.join(args.out, "records.jsonl")
    save_records(world.records, records_path)
    manifest.add_output(records_path)
    _write_text(manifest, args.out, "corpus.txt", "\n".join(world.corpus_lines) + "\n")
    write_manifest(manifest)
    print(
        f"wrote {len(world.records)} records, {len(world.corpus_lines)} corpus lines, "
        f"vocabulary of {len(world.vocab)} tokens -> {args.out}"
    )
    return 0


def cmd_clean_data(args) -> int:
    cfg = _resolve_config(args)
    records = load_records(args.data)
    kept, removals = clean_overlaps(records)
    _prepare_out(args.out)
    manifest = start_manifest("clean-data", cfg.seed, config_to_dict(cfg), args.out)
    manifest.add_input(args.data)
    kept_path = os.path.join(args.out, "records.jsonl")
    save_records(kept, kept_path)
    manifest.add_output(kept_path)
    _write_json(manifest, args.out, "removals.json", [dataclasses.asdict(r) for r in removals])
    write_manifest(manifest)
    if removals:
        for r in removals:
            print(f"removed record {r.index}: {r.reason} (matches record {r.matched_index})")
    print(f"kept {len(kept)} of {len(records)} records -> {args.out}")
    return 0


def cmd_stats(args) -> int:
    records = load_records(args.data)
    stats = subject_stats(records)
    width = max(len(tag) for tag in stats)
    for tag, percent in stats.items():
        print(f"{tag:<{width}}  {percent:6.2f}%")
    print(f"total records: {len(records)}")
    if args.out:
        cfg = _resolve_config(args)
        _prepare_out(args.out)
        manifest = start_manifest("stats", cfg.seed, config_to_dict(cfg), args.out)
        manifest.add_input(args.data)
        _write_json(manifest, args.out, "stats.json", {"n_records": len(records), "subject_tags": stats})
        write_manifest(manifest)
    return 0


def cmd_pretrain_lm(args) -> int:
    cfg = _resolve_config(args)
    records = load_records(args.data)
    if not os.path.isfile(args.corpus):
        raise IoError(f"corpus file not found: {args.corpus}")
    with open(args.corpus, "r", encoding="utf-8") as fh:
        corpus_lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not corpus_lines:
        raise ValidationError(f"corpus file is empty: {args.corpus}")
    vocab = build_vocab(corpus_lines, records)
    lm = CausalLM(vocab, cfg.lm, seed=cfg.seed)
    pc = cfg.pretrain
    report = pretrain(
        lm, corpus_lines,
        epochs=pc.epochs, lr=pc.lr, batch_packs=pc.batch_packs, seed=pc.seed,
        target_ce=pc.target_ce, target_accuracy=pc.target_accuracy,
        log=print,
    )
    _prepare_out(args.out)
    manifest = start_manifest("pretrain-lm", cfg.seed, config_to_dict(cfg), args.out)
    manifest.add_input(args.data)
    manifest.add_input(args.corpus)
    lm_path = os.path.join(args.out, "lm.bin")
    lm.save(lm_path)
    manifest.add_output(lm_path)
    history = "\n".join(f"{e},{ce:.10g},{acc:.10g}" for e, ce, acc in report.history)
    _write_text(manifest, args.out, "pretrain.csv", "epoch,ce,accuracy\n" + history + "\n")
    write_manifest(manifest)
    print(
        f"pretrained {report.epochs_run} epochs: held-out ce {report.final_ce:.4f}, "
        f"last-token accuracy {report.final_accuracy:.3f} -> {lm_path}"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    records = load_records(args.data)
    lm = CausalLM.load(args.lm)
    train_records = _split_records(records, "train")
    valid_records = [r for r in records if r.split == "valid"]
    system = MedrekSystem(lm.vocab, lm, cfg.system)

    def log(epoch, row, valid_total):
        if epoch % 10 == 0 or epoch == cfg.train.epochs - 1:
            print(f"epoch {epoch}: total {row.total:.4f} (eff {row.eff:.4f}, valid {valid_total:.4f})")

    result = train(system, train_records, valid_records, cfg.train, log=log)
    _prepare_out(args.out)
    manifest = start_manifest("train", cfg.seed, config_to_dict(cfg), args.out)
    manifest.add_input(args.data)
    manifest.add_input(args.lm)
    editor_path = os.path.join(args.out, "editor.bin")
    system.save(editor_path)
    manifest.add_output(editor_path)
    loss_path = os.path.join(args.out, "loss.csv")
    write_loss_csv(result.curve, loss_path)
    manifest.add_output(loss_path)
    _write_text(
        manifest, args.out, "valid.csv",
        "epoch,total\n" + "\n".join(f"{e},{v:.10g}" for e, v in enumerate(result.valid_curve)) + "\n",
    )
    if not args.no_figures:
        curve_rows = [{"epoch": e, **dataclasses.asdict(row)} for e, row in enumerate(result.curve)]
        valid_rows = [{"epoch": e, "total": v} for e, v in enumerate(result.valid_curve)]
        manifest.add_output(plot_loss_curve(curve_rows, os.path.join(args.out, "loss.png"), valid_rows))
    write_manifest(manifest)
    print(
        f"trained {len(result.curve)} epochs on {len(train_records)} records; "
        f"kept epoch {result.best_epoch} (validation total {result.best_valid_total:.4f}) -> {editor_path}"
    )
    return 0


def cmd_edit(args) -> int:
    system = _load_editor(args.editor, args.lm)
    records = load_records(args.data)
    for record in records:
        system.insert_record(record)
    result = system.retrieve(args.query)
    if result.entry is None:
        top = float(result.sims.max()) if len(result.sims) else float("nan")
        print(f"gate: abstained (best key {top:.4f} vs prototype {result.proto_sim:.4f})")
    else:
        t = result.entry.triple
        print(
            f"gate: entry {result.entry.entry_id} '{t.subject} {t.relation} -> {t.object}' "
            f"(key {result.sims[result.entry.entry_id]:.4f} vs prototype {result.proto_sim:.4f})"
        )
    n_tokens = args.tokens
    if n_tokens is None:
        n_tokens = len(system.vocab.encode(result.entry.triple.object)) if result.entry else 3
    print("answer:", " ".join(system.answer_tokens(args.query, n_tokens)))
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    system = _load_editor(args.editor, args.lm)
    records = load_records(args.data)
    split = args.split or cfg.eval.split
    subset = _split_records(records, split)
    sizes = _parse_batch_sizes(args.batch_sizes) if args.batch_sizes else cfg.eval.batch_sizes
    sizes = _usable_batches(sizes, len(subset))
    fluency = cfg.eval.fluency()
    reports = [
        run_protocol(system, subset, batch_size=b, fluency=fluency, method="medrek", split=split)
        for b in sizes
    ]
    _prepare_out(args.out)
    manifest = start_manifest("eval", cfg.seed, config_to_dict(cfg), args.out)
    manifest.add_input(args.data)
    manifest.add_input(args.editor)
    manifest.add_input(args.lm)
    _write_text(manifest, args.out, "metrics.csv", metrics_csv(reports))
    for report in reports:
        _write_text(manifest, args.out, f"report_b{report.batch_size}.json", report_json(report))
        _write_text(manifest, args.out, f"outcomes_b{report.batch_size}.jsonl", outcome_lines(report))
    if not args.no_figures:
        manifest.add_output(plot_metrics_by_batch(reports, os.path.join(args.out, "metrics_by_batch.png")))
    write_manifest(manifest)
    print("batch   eff     gen     loc     flu     avg")
    for r in reports:
        print(f"{r.batch_size:<7d} {r.eff:<7.2f} {r.gen:<7.2f} {r.loc:<7.2f} {r.flu:<7.3f} {r.avg:.2f}")
    return 0


def cmd_diagnose(args) -> int:
    cfg = _resolve_config(args)
    system = _load_editor(args.editor, args.lm)
    records = load_records(args.data)
    split = args.split or cfg.eval.split
    subset = _split_records(records, split)
    sizes = _usable_batches(
        _parse_batch_sizes(args.batch_sizes) if args.batch_sizes else cfg.eval.batch_sizes, len(subset)
    )
    threshold = cfg.eval.overlap_threshold if args.threshold is None else args.threshold
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"--threshold must lie in (0, 1), got {threshold:g}")
    fluency = cfg.eval.fluency()
    classified = {}
    counts = {}
    overlaps = []
    for b in sizes:
        report = run_protocol(system, subset, batch_size=b, fluency=fluency, method="medrek", split=split)
        rows = classify_retrievals(report)
        classified[b] = rows
        counts[b] = outcome_counts(rows)
        if b >= 2:
            # overlap needs a pair; measure the keys of one b-edit batch
            system.kb.clear()
            for record in subset[:b]:
                system.insert_record(record)
            keys = np.stack([entry.key for entry in system.kb.entries])
            system.kb.clear()
            overlaps.append(high_sim_stats(keys, threshold))
    _prepare_out(args.out)
    manifest = start_manifest("diagnose", cfg.seed, config_to_dict(cfg), args.out)
    manifest.add_input(args.data)
    manifest.add_input(args.editor)
    manifest.add_input(args.lm)
    for b, rows in classified.items():
        _write_text(manifest, args.out, f"outcomes_b{b}.csv", outcome_csv(rows))
    _write_json(manifest, args.out, "counts.json", {str(b): c for b, c in counts.items()})
    _write_json(manifest, args.out, "overlap.json", [dataclasses.asdict(o) for o in overlaps])
    if not args.no_figures:
        if overlaps:
            manifest.add_output(plot_overlap_bars(overlaps, os.path.join(args.out, "overlap.png")))
        for b, rows in classified.items():
            manifest.add_output(plot_outcome_scatter(rows, os.path.join(args.out, f"scatter_b{b}.png")))
    write_manifest(manifest)
    for b in sizes:
        print(f"batch {b}: " + "; ".join(
            f"{metric} {dict(sorted(kinds.items()))}" for metric, kinds in counts[b].items()
        ))
    for o in overlaps:
        print(f"batch {o.batch_size}: {o.high_sim_percent:.2f}% of keys above cosine {o.threshold:g}")
    return 0


def cmd_kb_inspect(args) -> int:
    summary = checkpoint_summary(args.editor)
    cfg_line = ", ".join(f"{k}={v}" for k, v in summary["config"].items())
    print(f"editor checkpoint: {args.editor}")
    print(f"  config: {cfg_line}")
    print(f"  language model checksum: {summary['lm_checksum']}")
    print(f"  vocabulary: {summary['vocab_size']} tokens")
    print(f"  parameters: {summary['parameter_count']} floats in {len(summary['parameters'])} arrays")
    for p in summary["parameters"]:
        print(f"    {p['name']}: {p['shape'][0]}x{p['shape'][1]}")
    if args.out:
        _prepare_out(args.out)
        manifest = start_manifest("kb-inspect", 0, {}, args.out)
        manifest.add_input(args.editor)
        _write_json(manifest, args.out, "checkpoint.json", summary)
        write_manifest(manifest)
    return 0


def cmd_verify(args) -> int:
    problems = verify_manifest(args.manifest)
    if problems:
        for p in problems:
            print(f"verify: {p}", file=sys.stderr)
        return 4
    manifest = load_manifest(args.manifest)
    print(f"manifest ok: {len(manifest.inputs)} inputs, {len(manifest.outputs)} outputs verified")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="medrek",
        description="Retrieval-based knowledge editing for a small frozen language model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize records and pretraining corpus")
    _config_options(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("clean-data", help="drop efficacy edits that collide with locality probes")
    _config_options(p)
    p.add_argument("--data", required=True, help="records JSONL file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=cmd_clean_data)

    p = sub.add_parser("stats", help="subject-tag distribution of a records file")
    _config_options(p)
    p.add_argument("--data", required=True, help="records JSONL file")
    p.add_argument("--out", help="also write stats.json here")
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("pretrain-lm", help="train the language model on the corpus")
    _config_options(p)
    p.add_argument("--data", required=True, help="records JSONL file (fixes the vocabulary)")
    p.add_argument("--corpus", required=True, help="one training sentence per line")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=cmd_pretrain_lm)

    p = sub.add_parser("train", help="train the editor against a frozen language model")
    _config_options(p)
    p.add_argument("--data", required=True, help="records JSONL file")
    p.add_argument("--lm", required=True, help="language model snapshot")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("edit", help="insert edits and answer one query through the gate")
    p.add_argument("--editor", required=True, help="editor checkpoint")
    p.add_argument("--lm", required=True, help="language model snapshot")
    p.add_argument("--data", required=True, help="records JSONL file to insert")
    p.add_argument("--query", required=True, help="question text")
    p.add_argument("--tokens", type=int, help="answer length (default: retrieved target length)")
    p.set_defaults(handler=cmd_edit)

    p = sub.add_parser("eval", help="score efficacy, generality, locality, fluency")
    _config_options(p)
    _eval_arguments(p)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("diagnose", help="classify retrievals and measure key overlap")
    _config_options(p)
    _eval_arguments(p)
    p.add_argument("--threshold", type=float, help="overlap cosine threshold (default from config)")
    p.set_defaults(handler=cmd_diagnose)

    p = sub.add_parser("kb-inspect", help="summarize an editor checkpoint header")
    p.add_argument("--editor", required=True, help="editor checkpoint")
    p.add_argument("--out", help="also write checkpoint.json here")
    p.set_defaults(handler=cmd_kb_inspect)

    p = sub.add_parser("verify", help="re-check the hashes recorded in a run manifest")
    p.add_argument("manifest", help="path to manifest.json")
    p.set_defaults(handler=cmd_verify)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except MedrekError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
