# visadesk/services/corpusgen.py
"""Seeded synthetic corpus: labeled documents (page images + clean/degraded
text), RFEs with planted attacks, beneficiary store, example bank and template
library, all indexed by ``manifest.json``.

Every random draw goes through a ``random.Random`` derived from the config
seed; nothing touches global randomness.
"""
from __future__ import annotations

import json
import logging
import random
from collections import Counter
from dataclasses import dataclass
from datetime import date, timedelta
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from visadesk.core.errors import CorpusError
from visadesk.schemas.bank import BankRecord
from visadesk.schemas.corpus import (
    ClassSpec,
    CorpusConfig,
    CorpusManifest,
    ManifestDocument,
    ManifestRfe,
    PlantedSentence,
)
from visadesk.schemas.drafting import BeneficiaryRecord, RfeFields
from visadesk.services.attackdetect import read_bank_records
from visadesk.services.drafting import format_date
from visadesk.services.ensemble import Document, load_document_dir
from visadesk.services.imagefeat import PageImage, encode_pgm
from visadesk.services.textprep import document_tokens
from visadesk.utils.files import atomic_write_bytes, atomic_write_text, sha256_hex

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
PHRASES_FILE = DATA_DIR / "corpus_phrases.json"
BANK_FILE = DATA_DIR / "bank.json"
TEMPLATES_DIR = DATA_DIR / "templates"

PAGE_WIDTH, PAGE_HEIGHT = 128, 160
PAPER, INK_DARK, INK_MID, INK_LIGHT = 240, 40, 110, 170

MIN_OVERLAP = 0.6
EDIT_PROBABILITY = 1.0 / 3.0
RESPONSE_WINDOW = timedelta(days=87)
SERVICE_CENTERS = ("EAC", "WAC", "LIN", "SRC")
NOISE_ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789.,;:'|!"


@lru_cache(maxsize=2)
def _load_phrases(path: str) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def load_phrases(path: Optional[Path] = None) -> dict:
    return _load_phrases(str(path or PHRASES_FILE))


def corpus_config_hash(config: CorpusConfig) -> str:
    return sha256_hex(json.dumps(config.model_dump(), sort_keys=True, separators=(",", ":")))


def _rng(seed: int, stream: str) -> random.Random:
    # un flux indépendant par composant: ajouter des RFE ne décale pas les documents
    return random.Random(f"{seed}:{stream}")


# ---- Page images ----
def _rect(a: np.ndarray, y0: int, y1: int, x0: int, x1: int, value: int) -> None:
    a[max(y0, 0) : max(min(y1, PAGE_HEIGHT), 0), max(x0, 0) : max(min(x1, PAGE_WIDTH), 0)] = value


def _frame(a: np.ndarray, y0: int, y1: int, x0: int, x1: int, value: int, t: int = 2) -> None:
    _rect(a, y0, y0 + t, x0, x1, value)
    _rect(a, y1 - t, y1, x0, x1, value)
    _rect(a, y0, y1, x0, x0 + t, value)
    _rect(a, y0, y1, x1 - t, x1, value)


def render_page(layout: str, page_no: int, rng: random.Random) -> PageImage:
    """Coarse page geometry per layout; the classes differ in where the blocks sit."""
    a = np.full((PAGE_HEIGHT, PAGE_WIDTH), PAPER, dtype=np.uint8)
    dy, dx = rng.randint(-3, 3), rng.randint(-3, 3)
    if layout == "approval":
        _rect(a, 6 + dy, 26 + dy, 6 + dx, 122 + dx, INK_DARK if page_no == 1 else INK_MID)
        _frame(a, 36 + dy, 92 + dy, 10 + dx, 70 + dx, INK_DARK)
        bars_top = 100
    elif layout == "receipt":
        _rect(a, 6 + dy, 12 + dy, 6 + dx, 122 + dx, INK_MID)
        _rect(a, 18 + dy, 46 + dy, 78 + dx, 122 + dx, INK_DARK if page_no == 1 else INK_MID)
        bars_top = 54
    else:
        raise CorpusError(f"unknown page layout {layout!r}")

    # lignes de texte simulées
    y = bars_top + dy
    while y < PAGE_HEIGHT - 10:
        width = rng.randint(40, 108)
        _rect(a, y, y + 3, 10 + dx, 10 + dx + width, INK_LIGHT)
        y += rng.randint(6, 9)
    return PageImage(PAGE_WIDTH, PAGE_HEIGHT, a)


# ---- Text channels ----
def degrade_text(text: str, rate: float, rng: random.Random) -> str:
    """Per-character OCR-style corruption; newlines are kept so lines survive."""
    if not 0.0 <= rate < 1.0:
        raise CorpusError(f"ocr_noise_rate must lie in [0, 1), got {rate!r}")
    out = []
    for ch in text:
        if ch == "\n" or rng.random() >= rate:
            out.append(ch)
        elif rng.random() < 0.2:
            continue  # caractère perdu
        else:
            out.append(rng.choice(NOISE_ALPHABET))
    return "".join(out)


def document_text(layout: str, case_number: str, rng: random.Random, phrases: dict) -> str:
    shared = rng.sample(phrases["shared_phrases"], 3)
    own = phrases["class_phrases"][layout]
    body = rng.sample(own, min(len(own), rng.randint(8, 10)))
    lines = [*shared, f"Receipt Number: {case_number}", *body]
    return "\n".join(lines) + "\n"


# ---- Paraphrase ----
def token_overlap(original: Sequence[str], edited: Sequence[str]) -> float:
    """Share of the original tokens (as a multiset) still present after editing."""
    if not original:
        return 1.0
    kept = Counter(original) & Counter(edited)
    return sum(kept.values()) / len(original)


def paraphrase_sentence(
    tokens: Sequence[str],
    rng: random.Random,
    synonyms: Optional[dict[str, list[str]]] = None,
) -> list[str]:
    """At most one drop, one adjacent swap and one synonym substitution.

    Each edit is drawn independently; an edit that would bring the overlap
    with the original below ``MIN_OVERLAP`` is skipped.
    """
    original = list(tokens)
    if len(original) < 3:
        return original
    synonyms = load_phrases()["synonyms"] if synonyms is None else synonyms
    out = list(original)

    if rng.random() < EDIT_PROBABILITY:
        i = rng.randrange(len(out))
        candidate = out[:i] + out[i + 1 :]
        if token_overlap(original, candidate) >= MIN_OVERLAP:
            out = candidate

    if rng.random() < EDIT_PROBABILITY and len(out) >= 2:
        i = rng.randrange(len(out) - 1)
        out[i], out[i + 1] = out[i + 1], out[i]

    if rng.random() < EDIT_PROBABILITY:
        slots = [i for i, t in enumerate(out) if t in synonyms]
        if slots:
            i = rng.choice(slots)
            candidate = out[:i] + [rng.choice(synonyms[out[i]])] + out[i + 1 :]
            if token_overlap(original, candidate) >= MIN_OVERLAP:
                out = candidate
    return out


# ---- RFEs ----
def apportion(mix: dict[str, float], total: int, order: Sequence[str]) -> dict[str, int]:
    """Largest-remainder rounding; ties broken by ``order``."""
    raw = {a: mix.get(a, 0.0) * total for a in order}
    counts = {a: int(v) for a, v in raw.items()}
    rest = total - sum(counts.values())
    by_remainder = sorted(order, key=lambda a: (-(raw[a] - counts[a]), order.index(a)))
    for a in by_remainder[:rest]:
        counts[a] += 1
    return counts


def _case_number(rng: random.Random, taken: set[str]) -> str:
    while True:
        cn = (
            f"{rng.choice(SERVICE_CENTERS)}-{rng.randint(19, 23)}-"
            f"{rng.randint(100, 999)}-{rng.randint(10000, 99999)}"
        )
        if cn not in taken:
            taken.add(cn)
            return cn


def rfe_text(fields: RfeFields, body: Sequence[str]) -> str:
    header = [
        "U.S. Citizenship and Immigration Services",
        "REQUEST FOR EVIDENCE",
        f"Case Number: {fields.case_number}",
        f"Notice Date: {format_date(fields.rfe_date)}",
        f"Beneficiary: {fields.employee_name}",
        f"Petitioner: {fields.employer_name}",
        f"Attorney of Record: {fields.attorney_name}",
        f"Response Due: {fields.response_due_date:%m/%d/%Y}",
    ]
    return "\n".join(header) + "\n\n" + "\n".join(body) + "\n"


def _sentence_line(tokens: Sequence[str]) -> str:
    text = " ".join(tokens)
    return text[:1].upper() + text[1:] + "."


@dataclass(frozen=True)
class GeneratedRfe:
    entry: ManifestRfe
    text: str
    beneficiary: BeneficiaryRecord


def generate_rfes(
    config: CorpusConfig, bank: Sequence[BankRecord], phrases: dict
) -> list[GeneratedRfe]:
    attack_order = list(dict.fromkeys(r.attack_id for r in bank))
    unknown = sorted(set(config.attack_mix) - set(attack_order))
    if unknown:
        raise CorpusError(f"attack_mix names attacks missing from the bank: {unknown}")
    by_attack = {a: [j for j, r in enumerate(bank) if r.attack_id == a] for a in attack_order}

    rng = _rng(config.seed, "rfes")
    counts = apportion(config.attack_mix, config.n_rfes, attack_order)
    primaries = [a for a in attack_order for _ in range(counts[a])]
    rng.shuffle(primaries)

    taken: set[str] = set()
    out: list[GeneratedRfe] = []
    for k, primary in enumerate(primaries):
        planted = {primary}
        others = [a for a in attack_order if a != primary]
        if others and rng.random() < config.secondary_attack_rate:
            planted.add(rng.choice(others))
        planted_attacks = [a for a in attack_order if a in planted]

        notice = date(2021, 1, 4) + timedelta(days=rng.randrange(900))
        fields = RfeFields(
            case_number=_case_number(rng, taken),
            employee_name=rng.choice(phrases["beneficiaries"]),
            employer_name=rng.choice(phrases["employers"]),
            attorney_name=rng.choice(phrases["attorneys"]),
            rfe_date=notice,
            response_due_date=notice + RESPONSE_WINDOW,
        )

        distractors = rng.sample(phrases["rfe_distractors"], rng.randint(3, 5))
        planted_lines: list[PlantedSentence] = []
        for attack in planted_attacks:
            pool = by_attack[attack]
            for j in rng.sample(pool, min(config.planted_per_attack, len(pool))):
                tokens = paraphrase_sentence(
                    document_tokens(bank[j].sentence), rng, phrases["synonyms"]
                )
                planted_lines.append(
                    PlantedSentence(attack_id=attack, example_index=j, text=_sentence_line(tokens))
                )
        body = distractors + [p.text for p in planted_lines]
        rng.shuffle(body)

        rfe_id = f"rfe-{k:04d}"
        entry = ManifestRfe(
            rfe_id=rfe_id,
            path=f"rfes/{rfe_id}.txt",
            planted_attacks=planted_attacks,
            fields=fields,
            planted=planted_lines,
        )
        beneficiary = BeneficiaryRecord(
            case_number=fields.case_number,
            soc_code=rng.choice(phrases["soc_codes"]),
            field_of_study=rng.choice(phrases["fields_of_study"]),
            degree=rng.choice(phrases["degrees"]),
            institution=rng.choice(phrases["institutions"]),
        )
        out.append(GeneratedRfe(entry, rfe_text(fields, body), beneficiary))
    return out


def audit_overlap(rfes: Iterable[ManifestRfe], bank: Sequence[BankRecord]) -> list[str]:
    """Planted sentences whose overlap with their bank source is below ``MIN_OVERLAP``."""
    bad = []
    for rfe in rfes:
        for p in rfe.planted:
            source = document_tokens(bank[p.example_index].sentence)
            if token_overlap(source, document_tokens(p.text)) < MIN_OVERLAP:
                bad.append(f"{rfe.rfe_id}: example {p.example_index}")
    return bad


# ---- Corpus ----
def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _write_documents(
    config: CorpusConfig, out_dir: Path, phrases: dict
) -> list[ManifestDocument]:
    rng = _rng(config.seed, "documents")
    specs: list[ClassSpec] = [c for c in config.classes for _ in range(c.n_docs)]
    rng.shuffle(specs)

    taken: set[str] = set()
    entries = []
    for k, spec in enumerate(specs):
        doc_id = f"doc-{k:04d}"
        rel = Path("documents") / doc_id
        n_pages = 1
        if config.max_pages > 1 and rng.random() >= 0.7:
            n_pages = rng.randint(2, config.max_pages)
        pages = []
        for p in range(1, n_pages + 1):
            name = f"page-{p:02d}.pgm"
            atomic_write_bytes(out_dir / rel / name, encode_pgm(render_page(spec.layout, p, rng)))
            pages.append((rel / name).as_posix())

        clean = document_text(spec.layout, _case_number(rng, taken), rng, phrases)
        degraded = degrade_text(clean, config.ocr_noise_rate, rng)
        atomic_write_text(out_dir / rel / "clean.txt", clean)
        atomic_write_text(out_dir / rel / "degraded.txt", degraded)
        entries.append(
            ManifestDocument(
                doc_id=doc_id,
                label=spec.label,
                path=rel.as_posix(),
                pages=pages,
                clean_text=(rel / "clean.txt").as_posix(),
                degraded_text=(rel / "degraded.txt").as_posix(),
            )
        )
    return entries


def generate_corpus(config: CorpusConfig, out_dir: Path) -> CorpusManifest:
    out_dir = Path(out_dir)
    phrases = load_phrases()
    for spec in config.classes:
        if spec.layout not in phrases["class_phrases"]:
            raise CorpusError(f"no phrase pool for layout {spec.layout!r}")
    bank = read_bank_records(BANK_FILE)

    # 1) documents
    documents = _write_documents(config, out_dir, phrases)

    # 2) RFEs + bénéficiaires
    rfes = generate_rfes(config, bank, phrases)
    bad = audit_overlap((r.entry for r in rfes), bank)
    if bad:
        raise CorpusError(f"paraphrase overlap below {MIN_OVERLAP}: {', '.join(bad)}")
    for r in rfes:
        atomic_write_text(out_dir / r.entry.path, r.text)

    # 3) banque, store, gabarits
    atomic_write_bytes(out_dir / "bank.json", BANK_FILE.read_bytes())
    atomic_write_text(
        out_dir / "beneficiaries.json",
        _dump_json([r.beneficiary.model_dump() for r in rfes]),
    )
    for src in sorted(TEMPLATES_DIR.iterdir()):
        if src.is_file():
            atomic_write_bytes(out_dir / "templates" / src.name, src.read_bytes())

    manifest = CorpusManifest(
        seed=config.seed,
        config_hash=corpus_config_hash(config),
        classes=[c.label for c in config.classes],
        documents=documents,
        rfes=[r.entry for r in rfes],
    )
    atomic_write_text(out_dir / "manifest.json", _dump_json(manifest.model_dump(mode="json")))
    logger.info(
        "corpus written to %s: %d documents, %d RFEs (seed %d)",
        out_dir,
        len(documents),
        len(rfes),
        config.seed,
    )
    return manifest


# ---- Reading back ----
def read_manifest(path: Path) -> CorpusManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        return CorpusManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise CorpusError(f"malformed corpus manifest {path}: {e}") from e


def split_documents(
    entries: Sequence[ManifestDocument], train_fraction: float, seed: int
) -> tuple[list[ManifestDocument], list[ManifestDocument]]:
    """Stratified, deterministic train/test split (per-label shuffle)."""
    if not 0.0 < train_fraction < 1.0:
        raise CorpusError(f"train_fraction must lie in (0, 1), got {train_fraction!r}")
    train, test = [], []
    for label in sorted({e.label for e in entries}):
        group = sorted((e for e in entries if e.label == label), key=lambda e: e.doc_id)
        _rng(seed, f"split:{label}").shuffle(group)
        cut = round(len(group) * train_fraction)
        train.extend(group[:cut])
        test.extend(group[cut:])
    return sorted(train, key=lambda e: e.doc_id), sorted(test, key=lambda e: e.doc_id)


def load_documents(
    root: Path, entries: Sequence[ManifestDocument], text_channel: str = "degraded"
) -> list[Document]:
    root = Path(root)
    return [load_document_dir(root / e.path, text_channel, label=e.label) for e in entries]
