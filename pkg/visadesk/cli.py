# visadesk/cli.py
"""``visadesk`` command line.

Exit codes: 0 success, 1 runtime failure (diagnostic on stderr), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from datetime import date
from pathlib import Path
from typing import Optional, Sequence

from visadesk.core.config import ConfigFileError, Settings, config_hash, load_settings
from visadesk.core.errors import VisadeskError
from visadesk.schemas.corpus import ClassSpec, CorpusConfig
from visadesk.services.attackdetect import detect_in_text, load_bank
from visadesk.services.corpusgen import (
    generate_corpus,
    load_documents,
    read_manifest,
    split_documents,
)
from visadesk.services.drafting import (
    draft_response,
    load_store,
    load_template_library,
    write_draft,
)
from visadesk.services.ensemble import ModelBundle, load_document_dir, train_bundle
from visadesk.services.evalharness import evaluate_attacks, evaluate_documents, format_table
from visadesk.services.linclass import TrainConfig
from visadesk.utils.files import atomic_write_text

logger = logging.getLogger("visadesk")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class UsageError(Exception):
    """Flag combination rejected after parsing; reported like an argparse error."""


# ---- Argument types ----
def _tau(value: str) -> float:
    try:
        tau = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid tau {value!r}")
    if not 0.0 <= tau <= 1.0:
        raise argparse.ArgumentTypeError(f"tau must lie in [0, 1], got {value}")
    return tau


def _iso_date(value: str) -> date:
    try:
        return date.fromisoformat(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {value!r}")


def _noise_rate(value: str) -> float:
    rate = float(value)
    if not 0.0 <= rate < 1.0:
        raise argparse.ArgumentTypeError(f"noise rate must lie in [0, 1), got {value}")
    return rate


# ---- Parser ----
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="visadesk", description="Immigration document classification and RFE drafting."
    )
    parser.add_argument("--config", type=Path, help="JSON config file (flags override it)")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-corpus", help="generate a seeded synthetic corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--docs-per-class", type=int, dest="docs_per_class")
    p.add_argument("--n-rfes", type=int, dest="n_rfes")
    p.add_argument("--ocr-noise-rate", type=_noise_rate, dest="ocr_noise_rate")

    p = sub.add_parser("train-docs", help="train the image + text document classifiers")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="model bundle directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--train-fraction", type=float, dest="train_fraction")
    p.add_argument("--text-channel", choices=["clean", "degraded"], dest="text_channel")
    p.add_argument("--l2", type=float)
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--max-iters", type=int, dest="max_iters")

    p = sub.add_parser("classify", help="classify document directories")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("documents", nargs="*", type=Path)
    p.add_argument("--manifest", type=Path, help="corpus directory or manifest.json")
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.add_argument("--seed", type=int)
    p.add_argument("--train-fraction", type=float, dest="train_fraction")
    p.add_argument("--text-channel", choices=["clean", "degraded"], dest="text_channel")
    p.add_argument("--move", type=Path, metavar="DEST", help="move each document to DEST/<label>/")
    p.add_argument("--out", type=Path, help="JSON Lines output (default: stdout)")

    p = sub.add_parser("detect", help="detect RFE attacks")
    p.add_argument("rfes", nargs="+", type=Path)
    p.add_argument("--bank", type=Path, required=True)
    p.add_argument("--tau", type=_tau)
    p.add_argument("--out", type=Path, help="JSON output (default: stdout)")

    p = sub.add_parser("draft", help="draft an RFE response")
    p.add_argument("rfe", type=Path)
    p.add_argument("--bank", type=Path, required=True)
    p.add_argument("--store", type=Path, required=True, help="beneficiary store (JSON)")
    p.add_argument("--templates", type=Path, required=True, help="template library directory")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--tau", type=_tau)
    p.add_argument(
        "--today", type=_iso_date, required=True, help="date printed in the draft (YYYY-MM-DD)"
    )

    p = sub.add_parser("eval-docs", help="evaluate a model bundle on a corpus split")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.add_argument("--seed", type=int)
    p.add_argument("--train-fraction", type=float, dest="train_fraction")
    p.add_argument("--text-channel", choices=["clean", "degraded"], dest="text_channel")
    p.add_argument("--json", type=Path, dest="json_out")

    p = sub.add_parser("eval-attacks", help="evaluate attack detection on a corpus")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--bank", type=Path, help="default: <corpus>/bank.json")
    p.add_argument("--tau", type=_tau)
    p.add_argument("--target", dest="target_attack")
    p.add_argument("--json", type=Path, dest="json_out")
    return parser


def _settings_from_args(args: argparse.Namespace) -> Settings:
    overrides = {k: v for k, v in vars(args).items() if k in Settings.model_fields}
    return load_settings(args.config, **overrides)


def _configure_logging(level: str) -> None:
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _emit(text: str, out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        atomic_write_text(out, text)


def _train_config(s: Settings) -> TrainConfig:
    return TrainConfig(
        l2=s.l2, learning_rate=s.learning_rate, max_iters=s.max_iters, grad_tol=s.grad_tol
    )


def _split(entries, which: str, s: Settings):
    if which == "all":
        return list(entries)
    train, test = split_documents(entries, s.train_fraction, s.seed)
    return train if which == "train" else test


# ---- Commands ----
def cmd_gen_corpus(args, s: Settings) -> int:
    config = CorpusConfig(
        seed=s.seed,
        classes=[
            ClassSpec(label="i797-approval", layout="approval", n_docs=s.docs_per_class),
            ClassSpec(label="i797-receipt", layout="receipt", n_docs=s.docs_per_class),
        ],
        n_rfes=s.n_rfes,
        ocr_noise_rate=s.ocr_noise_rate,
    )
    manifest = generate_corpus(config, args.out)
    print(f"{len(manifest.documents)} documents, {len(manifest.rfes)} RFEs -> {args.out}")
    return EXIT_OK


def cmd_train_docs(args, s: Settings) -> int:
    manifest = read_manifest(args.corpus)
    train, _ = split_documents(manifest.documents, s.train_fraction, s.seed)
    documents = load_documents(args.corpus, train, s.text_channel)
    bundle = train_bundle(documents, config=_train_config(s), config_hash=config_hash(s))
    bundle.save(args.out)
    print(f"trained on {len(documents)} documents -> {args.out}")
    return EXIT_OK


def _move(doc_dir: Path, dest_root: Path, label: str) -> Path:
    target = dest_root / label / doc_dir.name
    if doc_dir.resolve() == target.resolve():
        return target  # déjà rangé
    if target.exists():
        raise VisadeskError(f"cannot move {doc_dir}: {target} already exists")
    target.parent.mkdir(parents=True, exist_ok=True)
    shutil.move(str(doc_dir), str(target))
    return target


def cmd_classify(args, s: Settings) -> int:
    if bool(args.documents) == bool(args.manifest):
        raise UsageError("give document directories or --manifest, not both or neither")
    if args.move and args.manifest:
        raise UsageError("--move only applies to document directories")

    bundle = ModelBundle.load(args.model)
    if args.manifest:
        manifest = read_manifest(args.manifest)
        root = args.manifest if args.manifest.is_dir() else args.manifest.parent
        documents = load_documents(root, _split(manifest.documents, args.split, s), s.text_channel)
    else:
        documents = [load_document_dir(d, s.text_channel) for d in args.documents]

    lines = []
    for doc in documents:
        trace = bundle.classify(doc)
        record = trace.to_record(doc.doc_id, str(doc.path) if doc.path else None)
        if args.move:
            record.moved_to = str(_move(doc.path, args.move, trace.predicted))
        lines.append(record.model_dump_json())
    _emit("".join(line + "\n" for line in lines), args.out)
    logger.info("classified %d documents", len(documents))
    return EXIT_OK


def cmd_detect(args, s: Settings) -> int:
    bank = load_bank(args.bank)
    reports = []
    for path in args.rfes:
        report, _ = detect_in_text(path.read_text(encoding="utf-8"), bank, s.tau)
        reports.append(report.to_record(str(path)).model_dump())
        logger.info("%s: detected %s", path, ", ".join(report.detected_ids) or "nothing")
    _emit(json.dumps(reports, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_draft(args, s: Settings) -> int:
    bank = load_bank(args.bank)
    store = load_store(args.store, s.database_url)
    library = load_template_library(args.templates)
    logger.info("draft: today=%s", args.today.isoformat())
    result = draft_response(
        args.rfe.read_text(encoding="utf-8"), store, bank, library, s.tau, args.today
    )
    path = write_draft(result, args.out_dir, args.rfe.stem, str(args.rfe))
    print(f"{result.draft.status}: {path}")
    if result.draft.missing_fields:
        print("missing fields: " + ", ".join(result.draft.missing_fields))
    for note in result.notes:
        print(f"note: {note}")
    return EXIT_OK


def cmd_eval_docs(args, s: Settings) -> int:
    bundle = ModelBundle.load(args.model)
    manifest = read_manifest(args.corpus)
    entries = _split(manifest.documents, args.split, s)
    evaluation = evaluate_documents(bundle, load_documents(args.corpus, entries, s.text_channel))
    print(format_table(evaluation.rows), end="")
    print(f"image-only accuracy: {evaluation.image_accuracy:.4f}")
    print(f"text-only accuracy:  {evaluation.text_accuracy:.4f}")
    if args.json_out:
        atomic_write_text(args.json_out, json.dumps(evaluation.as_record(), indent=2) + "\n")
    return EXIT_OK


def cmd_eval_attacks(args, s: Settings) -> int:
    manifest = read_manifest(args.corpus)
    bank = load_bank(args.bank or args.corpus / manifest.bank)
    evaluation = evaluate_attacks(bank, s.tau, manifest.rfes, s.target_attack, args.corpus)
    print(evaluation.format(), end="")
    if args.json_out:
        atomic_write_text(args.json_out, json.dumps(evaluation.as_record(), indent=2) + "\n")
    return EXIT_OK


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train-docs": cmd_train_docs,
    "classify": cmd_classify,
    "detect": cmd_detect,
    "draft": cmd_draft,
    "eval-docs": cmd_eval_docs,
    "eval-attacks": cmd_eval_attacks,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    try:
        settings = _settings_from_args(args)
    except ConfigFileError as e:
        parser.print_usage(sys.stderr)
        print(f"visadesk: error: {e}", file=sys.stderr)
        return EXIT_USAGE

    _configure_logging(settings.log_level)
    logger.info(
        "visadesk %s: config %s (hash %s)",
        args.command,
        json.dumps(settings.model_dump(), sort_keys=True),
        config_hash(settings)[:12],
    )
    try:
        return COMMANDS[args.command](args, settings)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"visadesk: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (VisadeskError, OSError) as e:
        logger.debug("command failed", exc_info=True)
        print(f"visadesk: {e}", file=sys.stderr)
        return EXIT_FAILURE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
