"""Command-line front end orchestrating the pipeline.

Subcommands: build-vocab, corrupt, train, paraphrase, evaluate, report.
Exit codes: 0 ok, 2 input error, 3 training divergence, 4 malformed data,
5 schema mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import decode as decode_mod
from . import metrics as metrics_mod
from . import model as model_mod
from . import vat as vat_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config, parse_run_config, replace_seed
from .errors import (
    CheckpointError,
    ConfigError,
    DivergenceDetected,
    MalformedRecord,
    ParakitError,
    SchemaMismatch,
)
from .lora import AdapterSet
from .metrics import REPORT_COLUMNS, EvalRecord, MetricConfig
from .rng import component_rng

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DIVERGENCE = 3
EXIT_MALFORMED = 4
EXIT_SCHEMA = 5


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _read_lines(path: str) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e


def _load_stopwords(cfg: RunConfig) -> corpus_mod.StopwordSet:
    if not cfg.paths.stopwords_dir:
        return corpus_mod.StopwordSet()
    table = corpus_mod.load_stopword_dir(cfg.paths.stopwords_dir)
    return table.get(cfg.lang, corpus_mod.StopwordSet())


def _get_vocab(cfg: RunConfig, lines: list[str]) -> corpus_mod.Vocab:
    if cfg.paths.vocab:
        return corpus_mod.Vocab.load(cfg.paths.vocab)
    return corpus_mod.build_vocab(lines, cfg.tokenize_mode, cfg.model.vocab_size)


def _vocab_text(vocab: corpus_mod.Vocab) -> str:
    lines = [f"parakit-vocab 1 mode={vocab.mode}"]
    lines.extend(vocab.id_to_token[corpus_mod.N_RESERVED:])
    return "\n".join(lines) + "\n"


def _write_history(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=list(vat_mod.HISTORY_COLUMNS))
        w.writeheader()
        for row in rows:
            w.writerow(row)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_build_vocab(args) -> int:
    lines = _read_lines(args.corpus)
    vocab = corpus_mod.build_vocab(lines, args.mode, args.max_size)
    vocab.save(args.out)
    total = hits = 0
    for line in lines:
        if not line.strip():
            continue
        for s in corpus_mod.split_surfaces(line, args.mode):
            total += 1
            hits += int(s in vocab.token_to_id)
    pct = 100.0 * hits / total if total else 0.0
    print(f"vocab size {len(vocab)} (incl. 4 reserved), corpus coverage {pct:.2f}%")
    return EXIT_OK


def cmd_corrupt(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    cfg.validate(require=("corpus",))
    lines = _read_lines(cfg.paths.corpus)
    vocab = _get_vocab(cfg, lines)
    stop = _load_stopwords(cfg)
    rng = component_rng(cfg.seed, "corrupt")
    pairs = corpus_mod.make_pairs(lines, vocab, stop, cfg.corruption, rng)
    with open(args.out, "w", encoding="utf-8") as f:
        for pair in pairs:
            f.write(json.dumps({
                "source": decode_mod.render_surfaces(pair.source.surfaces, vocab.mode),
                "target": decode_mod.render_surfaces(pair.target.surfaces, vocab.mode),
                "lang": cfg.lang,
            }, ensure_ascii=False) + "\n")
    print(f"wrote {len(pairs)} pairs to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    cfg.validate(require=("corpus",))
    out_dir = Path(args.out or cfg.paths.checkpoint_dir or "checkpoints")
    out_dir.mkdir(parents=True, exist_ok=True)

    lines = _read_lines(cfg.paths.corpus)
    vocab = _get_vocab(cfg, lines)
    vocab_text = _vocab_text(vocab)
    stop = _load_stopwords(cfg)
    pairs_raw = corpus_mod.make_pairs(
        lines, vocab, stop, cfg.corruption, component_rng(cfg.seed, "corrupt"))
    packed = [corpus_mod.pack(p, vocab, cfg.model.max_len) for p in pairs_raw]

    if args.resume:
        ck = load_checkpoint(args.resume)
        params = ck.params
        adapters = ck.adapters
    else:
        params = model_mod.init_parameters(cfg.model, component_rng(cfg.seed, "init"))
        adapters = AdapterSet.create(
            cfg.model, cfg.lora.rank, component_rng(cfg.seed, "lora"), alpha=cfg.lora.alpha)

    history_rows: list[dict] = []
    history_path = out_dir / "history.csv"

    def on_epoch(epoch: int, reports):
        history_rows.extend(r.as_row() for r in reports)
        _write_history(history_path, history_rows)
        save_checkpoint(out_dir / f"epoch{epoch:03d}.ckpt", cfg.raw_text, vocab_text,
                        params, adapters, history=history_path.name)

    try:
        vat_mod.train(
            packed, params, cfg.model, adapters, cfg.vat,
            shuffle_rng=component_rng(cfg.seed, "train/shuffle"),
            delta_rng=component_rng(cfg.seed, "train/delta"),
            hessian_rng=component_rng(cfg.seed, "train/hessian"),
            epoch_callback=on_epoch)
    finally:
        _write_history(history_path, history_rows)
        # the history pointer is relative to the checkpoint's directory so
        # identical runs produce identical bytes wherever they land
        save_checkpoint(out_dir / "final.ckpt", cfg.raw_text, vocab_text,
                        params, adapters, history=history_path.name)
    print(f"trained {cfg.vat.epochs} epochs; final checkpoint {out_dir / 'final.ckpt'}")
    return EXIT_OK


def _checkpoint_runtime(path: str):
    ck = load_checkpoint(path)
    cfg = parse_run_config(ck.config_text)
    vocab = ck.vocab()
    return ck, cfg, vocab


def cmd_paraphrase(args) -> int:
    ck, cfg, vocab = _checkpoint_runtime(args.checkpoint)
    if args.seed is not None:
        cfg = replace_seed(cfg, args.seed)
    stop = _load_stopwords(cfg)
    corrupt_rng = component_rng(cfg.seed, "paraphrase/corrupt")
    sample_rng = component_rng(cfg.seed, "paraphrase/sample")
    lines = _read_lines(args.input) if args.input and args.input != "-" else \
        [ln.rstrip("\n") for ln in sys.stdin]
    out_f = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for line in lines:
            if not line.strip():
                out_f.write("\n")
                continue
            try:
                result = decode_mod.paraphrase(
                    line, ck.params, cfg.model, ck.adapters, vocab, stop,
                    cfg.corruption, cfg.decode, corrupt_rng, sample_rng)
            except ParakitError as e:
                print(f"warning: {e}; emitting input unchanged", file=sys.stderr)
                result = line
            out_f.write(result + "\n")
    finally:
        if out_f is not sys.stdout:
            out_f.close()
    return EXIT_OK


def _read_eval_records(path: str) -> list[EvalRecord]:
    records = []
    for i, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedRecord(i, f"invalid JSON ({e.msg})") from e
        if not isinstance(obj, dict) or "input" not in obj:
            raise MalformedRecord(i, "record must be an object with an 'input' field")
        try:
            records.append(EvalRecord(
                input=str(obj["input"]),
                candidate=str(obj.get("candidate", "")),
                references=tuple(str(r) for r in obj.get("references", [])),
                lang=str(obj.get("lang", "en")),
            ))
        except (TypeError, ValueError) as e:
            raise MalformedRecord(i, str(e)) from e
    if not records:
        raise MalformedRecord(0, "no records in file")
    return records


def cmd_evaluate(args) -> int:
    ck, cfg, vocab = _checkpoint_runtime(args.checkpoint)
    if args.seed is not None:
        cfg = replace_seed(cfg, args.seed)
    records = _read_eval_records(args.eval_set)
    stop = _load_stopwords(cfg)
    corrupt_rng = component_rng(cfg.seed, "evaluate/corrupt")
    sample_rng = component_rng(cfg.seed, "evaluate/sample")

    filled = []
    for i, rec in enumerate(records, start=1):
        if rec.candidate.strip():
            filled.append(rec)
            continue
        try:
            cand = decode_mod.paraphrase(
                rec.input, ck.params, cfg.model, ck.adapters, vocab, stop,
                cfg.corruption, cfg.decode, corrupt_rng, sample_rng)
        except ParakitError as e:
            raise MalformedRecord(i, f"cannot generate candidate: {e}") from e
        if not cand.strip():
            # an empty generation cannot be scored; fall back to the input,
            # which the diversity columns then report as zero diversity
            print(f"warning: record {i}: empty generation, scoring the input",
                  file=sys.stderr)
            cand = rec.input
        filled.append(EvalRecord(input=rec.input, candidate=cand,
                                 references=rec.references, lang=rec.lang))

    mcfg = MetricConfig(tokenize_mode=vocab.mode)
    report = metrics_mod.evaluate_corpus(
        filled, ck.params, cfg.model, vocab, ck.adapters, mcfg)

    prefix = args.out
    rec_path = Path(f"{prefix}.records.csv")
    sum_path = Path(f"{prefix}.summary.csv")
    with open(rec_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["lang", *REPORT_COLUMNS])
        for row in report.records:
            w.writerow([row["lang"]] + [
                "" if row[c] is None else f"{row[c]:.6f}" for c in REPORT_COLUMNS])
    with open(sum_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["lang", "count", *REPORT_COLUMNS])
        for lang, agg in report.language_rows():
            w.writerow([lang, int(agg["count"])] + [
                "" if agg[c] is None else f"{agg[c]:.6f}" for c in REPORT_COLUMNS])
    table = metrics_mod.render_table(report.language_rows())
    print(table)
    print(f"wrote {rec_path} and {sum_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    runs = []
    labels = []
    for path in args.histories:
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        if not rows:
            raise SchemaMismatch(f"{path}: empty history")
        runs.append(rows)
        stem = Path(path).stem
        label = stem if stem not in labels else f"{stem}{len(labels)}"
        labels.append(label)
    schema = set(runs[0][0].keys())
    for path, rows in zip(args.histories, runs):
        if set(rows[0].keys()) != schema:
            raise SchemaMismatch(f"{path}: columns {sorted(rows[0].keys())} "
                                 f"!= {sorted(schema)}")

    numeric = [c for c in vat_mod.HISTORY_COLUMNS if c not in ("epoch", "step", "phase")]
    per_epoch: list[dict[str, dict[str, float]]] = []
    epochs_sets = []
    for rows in runs:
        agg: dict[int, dict[str, list[float]]] = {}
        phase: dict[int, str] = {}
        for row in rows:
            e = int(row["epoch"])
            agg.setdefault(e, {c: [] for c in numeric})
            for c in numeric:
                agg[e][c].append(float(row[c]))
            phase[e] = row.get("phase", "")
        per_epoch.append({
            e: {**{c: sum(v) / len(v) for c, v in cols.items()}, "phase": phase[e]}
            for e, cols in agg.items()})
        epochs_sets.append(set(agg))
    epochs = sorted(set.union(*epochs_sets))

    out_path = Path(f"{args.out}.csv")
    header = ["epoch"]
    for label in labels:
        header += [f"{c}__{label}" for c in numeric] + [f"phase__{label}"]
    with open(out_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for e in epochs:
            row: list = [e]
            for run in per_epoch:
                if e in run:
                    row += [f"{run[e][c]:.6f}" for c in numeric] + [run[e]["phase"]]
                else:
                    row += [""] * (len(numeric) + 1)
            w.writerow(row)

    width = 12
    print("epoch".ljust(6) + "".join(
        f"loss_rec__{la}"[:width].ljust(width + 2) for la in labels))
    for e in epochs:
        cells = []
        for run in per_epoch:
            cells.append(f"{run[e]['loss_rec']:.4f}".ljust(width + 2) if e in run
                         else "-".ljust(width + 2))
        print(str(e).ljust(6) + "".join(cells))
    print(f"wrote {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="parakit",
                                 description="corrupt-and-reconstruct paraphrasing pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build a vocabulary file from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=corpus_mod.TOKENIZE_MODES, default="whitespace")
    p.add_argument("--max-size", type=int, default=10000)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_build_vocab)

    p = sub.add_parser("corrupt", help="dump corrupted training pairs as JSONL")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_corrupt)

    p = sub.add_parser("train", help="train adapters with virtual adversarial training")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="checkpoint directory")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("paraphrase", help="paraphrase one line per input line")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", default="-", help="input file, - for stdin")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_paraphrase)

    p = sub.add_parser("evaluate", help="score an eval set and write reports")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--eval-set", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("report", help="merge training histories into a comparison")
    p.add_argument("histories", nargs="+")
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except DivergenceDetected as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except MalformedRecord as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MALFORMED
    except SchemaMismatch as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ConfigError, CheckpointError, ParakitError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
