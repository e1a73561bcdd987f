# visadesk/services/drafting.py
"""RFE response drafting: field extraction, beneficiary lookup, template
selection, placeholder filling and assembly into a response draft.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from datetime import date, datetime
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from pydantic import ValidationError
from sqlalchemy import delete, select
from sqlalchemy.exc import IntegrityError, SQLAlchemyError

from visadesk.core.errors import (
    BeneficiaryNotFoundError,
    BeneficiaryStoreError,
    DraftAssemblyError,
    MissingPlaceholderError,
    TemplateLibraryError,
    TemplateSelectionError,
)
from visadesk.database import DEFAULT_DATABASE_URL, Base, make_engine, make_session_factory
from visadesk.models.beneficiary import Beneficiary
from visadesk.schemas.drafting import (
    FIELD_NAMESPACE,
    BeneficiaryFile,
    BeneficiaryRecord,
    RfeFields,
    TemplateManifest,
)
from visadesk.schemas.records import DraftManifestOut, EvidenceOut, SectionOut
from visadesk.services.attackdetect import AttackReport, Evidence, ExampleBank, detect_in_text
from visadesk.utils.files import atomic_write_text

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
PATTERNS_FILE = DATA_DIR / "rfe_patterns.json"
PREAMBLE_FILE = DATA_DIR / "preamble.txt"

PLACEHOLDER = re.compile(r"\{\{([a-z_][a-z0-9_]*)\}\}")
MARKER_START = "{{"
SECTION_DELIMITER = "\n\n* * *\n\n"
DATE_FORMATS = ("%B %d, %Y", "%m/%d/%Y")
DATE_FIELDS = ("rfe_date", "response_due_date")


# ---- Field extraction ----
@lru_cache(maxsize=4)
def load_patterns(path: Optional[str] = None) -> dict[str, re.Pattern]:
    raw = json.loads(Path(path or PATTERNS_FILE).read_text(encoding="utf-8"))
    unknown = set(raw) - set(RfeFields.model_fields)
    if unknown:
        raise TemplateLibraryError(f"pattern file names unknown fields: {sorted(unknown)}")
    return {name: re.compile(rx, re.MULTILINE) for name, rx in raw.items()}


def parse_date(value: str) -> Optional[date]:
    for fmt in DATE_FORMATS:
        try:
            return datetime.strptime(value.strip(), fmt).date()
        except ValueError:
            continue
    return None


def format_date(d: date) -> str:
    return f"{d:%B} {d.day}, {d.year}"


def extract_fields(
    raw_rfe_text: str, patterns: Optional[Mapping[str, re.Pattern]] = None
) -> RfeFields:
    """Labeled-line extraction on the raw text; absent fields stay ``None``."""
    patterns = patterns or load_patterns()
    values: dict[str, object] = {}
    for name, rx in patterns.items():
        m = rx.search(raw_rfe_text)
        if not m:
            continue
        value = m.group("value").strip()
        if name in DATE_FIELDS:
            parsed = parse_date(value)
            if parsed is None:
                logger.warning("unparseable %s %r; treated as absent", name, value)
                continue
            values[name] = parsed
        elif value:
            values[name] = value

    notice, due = values.get("rfe_date"), values.get("response_due_date")
    if notice and due and due < notice:
        logger.warning("response due date %s precedes notice date %s; dropped", due, notice)
        values.pop("response_due_date")
    return RfeFields(**values)


# ---- Beneficiary store ----
class BeneficiaryStore:
    """Beneficiary records behind a SQLAlchemy session factory."""

    def __init__(self, database_url: str = DEFAULT_DATABASE_URL):
        self.engine = make_engine(database_url)
        self.SessionLocal = make_session_factory(self.engine)
        Base.metadata.create_all(bind=self.engine)

    def replace_all(self, records: Sequence[BeneficiaryRecord]) -> int:
        with self.SessionLocal() as db:
            try:
                db.execute(delete(Beneficiary))
                db.add_all(Beneficiary(**r.model_dump()) for r in records)
                db.commit()
            except IntegrityError as e:
                db.rollback()
                seen, dupes = set(), set()
                for r in records:
                    (dupes if r.case_number in seen else seen).add(r.case_number)
                raise BeneficiaryStoreError(
                    f"duplicate case numbers in beneficiary store: {', '.join(sorted(dupes))}"
                ) from e
            except SQLAlchemyError as e:
                db.rollback()
                raise BeneficiaryStoreError(f"cannot load beneficiary store: {e}") from e
        return len(records)

    def lookup(self, case_number: str) -> BeneficiaryRecord:
        with self.SessionLocal() as db:
            row = db.execute(
                select(Beneficiary).where(Beneficiary.case_number == case_number)
            ).scalar_one_or_none()
            if row is None:
                raise BeneficiaryNotFoundError(case_number)
            return BeneficiaryRecord.model_validate(row)

    def __len__(self) -> int:
        with self.SessionLocal() as db:
            return len(db.execute(select(Beneficiary.id)).all())


def load_store(path: Path, database_url: str = DEFAULT_DATABASE_URL) -> BeneficiaryStore:
    try:
        records = BeneficiaryFile.model_validate_json(Path(path).read_text(encoding="utf-8")).root
    except ValidationError as e:
        raise BeneficiaryStoreError(f"malformed beneficiary store {path}: {e}") from e
    store = BeneficiaryStore(database_url)
    n = store.replace_all(records)
    logger.info("beneficiary store loaded: %d records", n)
    return store


def lookup_beneficiary(store: BeneficiaryStore, case_number: str) -> BeneficiaryRecord:
    return store.lookup(case_number)


# ---- Templates ----
@dataclass(frozen=True)
class Template:
    id: str
    applicable_attack: str
    soc_selector: Optional[frozenset[str]]  # None = wildcard
    body: str

    @property
    def placeholders(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(PLACEHOLDER.findall(self.body)))

    def matches_soc(self, soc_code: Optional[str]) -> bool:
        return self.soc_selector is not None and soc_code in self.soc_selector


def _check_body(template_id: str, body: str) -> None:
    if body.count(MARKER_START) != len(PLACEHOLDER.findall(body)):
        raise TemplateLibraryError(f"template {template_id!r} has a malformed {{{{...}}}} marker")
    unknown = sorted(set(PLACEHOLDER.findall(body)) - FIELD_NAMESPACE)
    if unknown:
        raise TemplateLibraryError(
            f"template {template_id!r} uses placeholders outside the field namespace: "
            + ", ".join(unknown)
        )


def _read_body(path: Path) -> str:
    return path.read_text(encoding="utf-8").rstrip("\n")


def load_template_library(library_dir: Path) -> list[Template]:
    library_dir = Path(library_dir)
    try:
        manifest = TemplateManifest.model_validate_json(
            (library_dir / "manifest.json").read_text(encoding="utf-8")
        )
    except ValidationError as e:
        raise TemplateLibraryError(f"malformed template manifest in {library_dir}: {e}") from e

    templates: list[Template] = []
    seen: set[str] = set()
    for entry in manifest.templates:
        if entry.id in seen:
            raise TemplateLibraryError(f"duplicate template id {entry.id!r}")
        seen.add(entry.id)
        body = _read_body(library_dir / entry.file)
        _check_body(entry.id, body)
        selector = None if entry.soc_selector == "*" else frozenset(entry.soc_selector)
        templates.append(Template(entry.id, entry.applicable_attack, selector, body))
    logger.info("template library loaded: %d templates", len(templates))
    return templates


def select_templates(
    report: AttackReport,
    record: Optional[BeneficiaryRecord],
    library: Sequence[Template],
) -> list[Template]:
    """Per detected attack (bank order): SOC-specific templates, else the wildcard."""
    soc = record.soc_code if record else None
    chosen: list[Template] = []
    for attack in report.detected:
        candidates = [t for t in library if t.applicable_attack == attack.id]
        specific = [t for t in candidates if t.matches_soc(soc)]
        if specific:
            chosen.extend(specific)
            continue
        wildcard = [t for t in candidates if t.soc_selector is None]
        if not wildcard:
            raise TemplateSelectionError(attack.id, soc)
        chosen.extend(wildcard)
    return chosen


# ---- Filling ----
@dataclass(frozen=True)
class FilledSection:
    template_id: str
    attack_id: str
    text: str
    value_spans: tuple[tuple[int, int], ...] = ()
    missing: tuple[str, ...] = ()
    evidence: tuple[Evidence, ...] = ()


def _render(
    body: str, values: Mapping[str, str], missing_marker: bool
) -> tuple[str, tuple[tuple[int, int], ...], tuple[str, ...]]:
    # un seul passage: les valeurs insérées ne sont jamais ré-expansées
    out: list[str] = []
    spans: list[tuple[int, int]] = []
    missing: list[str] = []
    pos = length = 0
    for m in PLACEHOLDER.finditer(body):
        out.append(body[pos : m.start()])
        length += m.start() - pos
        name = m.group(1)
        if name in values:
            value = values[name]
            spans.append((length, length + len(value)))
        else:
            missing.append(name)
            value = f"[MISSING: {name}]"
        out.append(value)
        length += len(value)
        pos = m.end()
    out.append(body[pos:])
    if missing and not missing_marker:
        return "", (), tuple(missing)
    return "".join(out), tuple(spans), tuple(dict.fromkeys(missing))


def fill_template(t: Template, values: Mapping[str, str]) -> str:
    text, _, missing = _render(t.body, values, missing_marker=False)
    if missing:
        raise MissingPlaceholderError(t.id, missing)
    return text


def fill_section(
    t: Template, values: Mapping[str, str], evidence: Sequence[Evidence] = ()
) -> FilledSection:
    """Like ``fill_template`` but tolerant: unresolvable names become markers."""
    text, spans, missing = _render(t.body, values, missing_marker=True)
    return FilledSection(t.id, t.applicable_attack, text, spans, missing, tuple(evidence))


def field_values(
    fields: RfeFields, record: Optional[BeneficiaryRecord], today: Optional[date] = None
) -> dict[str, str]:
    values: dict[str, str] = {}
    if record is not None:
        values.update(record.model_dump())
    for name, v in fields.model_dump().items():
        if v is None:
            continue
        values[name] = format_date(v) if isinstance(v, date) else str(v)
    if today is not None:
        values["today"] = format_date(today)
    return values


def _unresolved_outside(text: str, spans: Sequence[tuple[int, int]]) -> bool:
    start = text.find(MARKER_START)
    while start != -1:
        if not any(a <= start < b for a, b in spans):
            return True
        start = text.find(MARKER_START, start + 1)
    return False


# ---- Assembly ----
@dataclass(frozen=True)
class ResponseDraft:
    preamble: str
    sections: tuple[str, ...]
    manifest: tuple[FilledSection, ...]
    missing_fields: tuple[str, ...] = ()

    @property
    def status(self) -> str:
        return "incomplete" if self.missing_fields else "complete"

    @property
    def text(self) -> str:
        return SECTION_DELIMITER.join((self.preamble, *self.sections)) + "\n"

    def to_manifest(
        self,
        report: AttackReport,
        case_number: Optional[str] = None,
        rfe: Optional[str] = None,
        today: Optional[date] = None,
        notes: Sequence[str] = (),
    ) -> DraftManifestOut:
        return DraftManifestOut(
            rfe=rfe,
            status=self.status,
            missing_fields=list(self.missing_fields),
            case_number=case_number,
            detected=list(report.detected_ids),
            threshold=report.threshold,
            today=today.isoformat() if today is not None else None,
            notes=list(notes),
            sections=[
                SectionOut(
                    template_id=s.template_id,
                    attack_id=s.attack_id,
                    evidence=[
                        EvidenceOut(
                            sentence_index=e.sentence_index,
                            example_index=e.example_index,
                            attack_id=s.attack_id,
                            similarity=e.similarity,
                        )
                        for e in s.evidence
                    ],
                )
                for s in self.manifest
            ],
        )


def render_preamble(fields: RfeFields, path: Optional[Path] = None) -> FilledSection:
    body = _read_body(Path(path or PREAMBLE_FILE))
    return fill_section(Template("preamble", "", None, body), field_values(fields, None))


def assemble_response(
    filled: Sequence[Union[str, FilledSection]],
    fields: RfeFields,
    preamble_file: Optional[Path] = None,
) -> ResponseDraft:
    if not filled:
        raise DraftAssemblyError("cannot assemble a response without sections")
    sections = [
        s if isinstance(s, FilledSection) else FilledSection(f"section-{n + 1}", "", s)
        for n, s in enumerate(filled)
    ]
    preamble = render_preamble(fields, preamble_file)
    for s in (preamble, *sections):
        if _unresolved_outside(s.text, s.value_spans):
            raise DraftAssemblyError(f"unresolved placeholder marker in {s.template_id!r}")
    missing = sorted({name for s in (preamble, *sections) for name in s.missing})
    return ResponseDraft(
        preamble=preamble.text,
        sections=tuple(s.text for s in sections),
        manifest=tuple(sections),
        missing_fields=tuple(missing),
    )


# ---- Pipeline ----
@dataclass(frozen=True)
class DraftResult:
    draft: ResponseDraft
    report: AttackReport
    fields: RfeFields
    record: Optional[BeneficiaryRecord] = None
    notes: tuple[str, ...] = field(default_factory=tuple)
    today: Optional[date] = None

    def manifest(self, rfe: Optional[str] = None) -> DraftManifestOut:
        return self.draft.to_manifest(
            self.report, self.fields.case_number, rfe, self.today, self.notes
        )


def draft_response(
    rfe_text: str,
    store: BeneficiaryStore,
    bank: ExampleBank,
    library: Sequence[Template],
    tau: float,
    today: Optional[date] = None,
) -> DraftResult:
    """detect -> extract -> lookup -> select -> fill -> assemble."""
    report, _ = detect_in_text(rfe_text, bank, tau)
    if not report.detected:
        raise DraftAssemblyError("no RFE attack detected; nothing to draft")

    fields = extract_fields(rfe_text)
    notes: list[str] = []
    record: Optional[BeneficiaryRecord] = None
    if fields.case_number is None:
        notes.append("case number not found in RFE text")
        logger.warning("case number not found in RFE text; beneficiary data unavailable")
    else:
        try:
            record = lookup_beneficiary(store, fields.case_number)
        except BeneficiaryNotFoundError as e:
            notes.append(str(e))
            logger.warning("%s; draft will be incomplete", e)

    templates = select_templates(report, record, library)
    values = field_values(fields, record, today)
    sections = [
        fill_section(t, values, report.evidence_for(t.applicable_attack)) for t in templates
    ]
    draft = assemble_response(sections, fields)
    logger.info(
        "draft assembled: %d sections, status=%s, attacks=%s",
        len(draft.sections),
        draft.status,
        ",".join(report.detected_ids),
    )
    return DraftResult(draft, report, fields, record, tuple(notes), today)


def write_draft(result: DraftResult, out_dir: Path, stem: str, rfe: Optional[str] = None) -> Path:
    out_dir = Path(out_dir)
    text_path = atomic_write_text(out_dir / f"{stem}.draft.txt", result.draft.text)
    atomic_write_text(
        out_dir / f"{stem}.draft.json",
        result.manifest(rfe).model_dump_json(indent=2) + "\n",
    )
    return text_path
