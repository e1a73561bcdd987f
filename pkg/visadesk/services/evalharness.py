# visadesk/services/evalharness.py
"""Evaluation arithmetic: confusion counts, metrics and per-class accuracy tables."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

from visadesk.core.errors import AttackDetectionError, EvaluationError
from visadesk.schemas.corpus import ManifestRfe
from visadesk.services.attackdetect import ExampleBank, detect_in_text
from visadesk.services.ensemble import Document, ModelBundle

logger = logging.getLogger(__name__)

ALL_LABEL = "All"


# ---- Metrics ----
@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise EvaluationError(f"{name} must be a non-negative integer, got {v!r}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def add(self, truth: bool, predicted: bool) -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + (truth and predicted),
            fp=self.fp + (not truth and predicted),
            fn=self.fn + (truth and not predicted),
            tn=self.tn + (not truth and not predicted),
        )


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def metrics(c: ConfusionCounts) -> Metrics:
    """Zero denominators give 0 for precision, recall and f1."""
    if c.total == 0:
        raise EvaluationError("cannot compute metrics on all-zero counts")
    accuracy = (c.tp + c.tn) / c.total
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(accuracy, precision, recall, f1)


# ---- Per-class table ----
@dataclass(frozen=True)
class ClassRow:
    label: str
    count: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.count if self.count else 0.0


def format_percent(fraction: float) -> str:
    """102/104 -> "98.08", 1.0 -> "100"."""
    return f"{fraction * 100:.2f}".rstrip("0").rstrip(".")


def document_report(
    outcomes: Sequence[tuple[str, Optional[str]]], classes: Sequence[str]
) -> list[ClassRow]:
    """``outcomes`` are (true label, predicted label or None); the "All" row comes first."""
    rows = [ClassRow(ALL_LABEL, len(outcomes), sum(t == p for t, p in outcomes))]
    for label in classes:
        mine = [(t, p) for t, p in outcomes if t == label]
        rows.append(ClassRow(label, len(mine), sum(t == p for t, p in mine)))
    return rows


def format_table(rows: Sequence[ClassRow]) -> str:
    header = ("Document type", "Count", "Correct prediction count", "Accuracy (%)")
    body = [(r.label, str(r.count), str(r.correct), format_percent(r.accuracy)) for r in rows]
    widths = [max(len(line[i]) for line in (header, *body)) for i in range(len(header))]
    lines = []
    for line in (header, *body):
        cells = [line[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(line[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


# ---- Documents ----
@dataclass(frozen=True)
class DocumentEvaluation:
    rows: tuple[ClassRow, ...]
    image_only: tuple[ClassRow, ...]
    text_only: tuple[ClassRow, ...]
    predictions: tuple[tuple[str, str, str], ...]  # (doc_id, vrai, prédit)

    @property
    def accuracy(self) -> float:
        return self.rows[0].accuracy

    @property
    def image_accuracy(self) -> float:
        return self.image_only[0].accuracy

    @property
    def text_accuracy(self) -> float:
        return self.text_only[0].accuracy

    def as_record(self) -> dict:
        def table(rows):
            return [
                {"label": r.label, "count": r.count, "correct": r.correct, "accuracy": r.accuracy}
                for r in rows
            ]

        return {
            "ensemble": table(self.rows),
            "image_only": table(self.image_only),
            "text_only": table(self.text_only),
        }


def evaluate_documents(bundle: ModelBundle, documents: Sequence[Document]) -> DocumentEvaluation:
    classes = list(bundle.classes.labels)
    if not documents:
        raise EvaluationError("no documents to evaluate")
    unlabeled = [d.doc_id for d in documents if d.label is None]
    if unlabeled:
        raise EvaluationError(f"documents without ground truth: {', '.join(unlabeled[:5])}")
    foreign = sorted({d.label for d in documents} - set(classes))
    if foreign:
        raise EvaluationError(
            f"manifest classes {foreign} are unknown to the model (model classes: {classes})"
        )

    fused, image, text, predictions = [], [], [], []
    for doc in documents:
        trace = bundle.classify(doc)
        # branche absente: pas de prédiction, compté comme une erreur
        img = trace.p_image.argmax() if trace.p_image is not None else None
        txt = trace.p_text.argmax() if trace.p_text is not None else None
        fused.append((doc.label, trace.predicted))
        image.append((doc.label, img))
        text.append((doc.label, txt))
        predictions.append((doc.doc_id, doc.label, trace.predicted))

    result = DocumentEvaluation(
        rows=tuple(document_report(fused, classes)),
        image_only=tuple(document_report(image, classes)),
        text_only=tuple(document_report(text, classes)),
        predictions=tuple(predictions),
    )
    logger.info(
        "document evaluation on %d docs: ensemble=%.4f image=%.4f text=%.4f",
        len(documents),
        result.accuracy,
        result.image_accuracy,
        result.text_accuracy,
    )
    return result


# ---- Attacks ----
@dataclass(frozen=True)
class AttackEvaluation:
    target: str
    tau: float
    counts: ConfusionCounts
    metrics: Metrics
    per_rfe: tuple[tuple[str, bool, bool], ...]  # (rfe_id, planté, détecté)

    def as_record(self) -> dict:
        return {
            "target": self.target,
            "tau": self.tau,
            "counts": asdict(self.counts),
            "metrics": self.metrics.as_dict(),
        }

    def format(self) -> str:
        c, m = self.counts, self.metrics
        return (
            f"attack: {self.target}  tau: {self.tau}\n"
            f"tp={c.tp} fp={c.fp} fn={c.fn} tn={c.tn}\n"
            f"Prediction accuracy (%)  {format_percent(m.accuracy)}\n"
            f"Precision                {m.precision:.4f}\n"
            f"Recall                   {m.recall:.4f}\n"
            f"F1-score                 {m.f1:.4f}\n"
        )


def evaluate_attacks(
    bank: ExampleBank,
    tau: float,
    rfes: Sequence[ManifestRfe],
    target: str,
    root: Optional[Path] = None,
) -> AttackEvaluation:
    """Per-RFE presence/absence of ``target`` against planted ground truth."""
    try:
        attack = bank.attack(target)
    except AttackDetectionError as e:
        raise EvaluationError(f"{e} (bank has {list(bank.attack_ids)})") from e
    logger.debug("evaluating %s: %s", attack.id, attack.description)
    root = Path(root) if root is not None else Path(".")

    counts = ConfusionCounts()
    per_rfe = []
    for rfe in rfes:
        raw = (root / rfe.path).read_text(encoding="utf-8")
        report, _ = detect_in_text(raw, bank, tau)
        truth = target in rfe.planted_attacks
        predicted = target in report.detected_ids
        counts = counts.add(truth, predicted)
        per_rfe.append((rfe.rfe_id, truth, predicted))

    result = AttackEvaluation(target, tau, counts, metrics(counts), tuple(per_rfe))
    logger.info(
        "attack evaluation %s at tau=%s on %d RFEs: tp=%d fp=%d fn=%d tn=%d",
        target,
        tau,
        len(rfes),
        counts.tp,
        counts.fp,
        counts.fn,
        counts.tn,
    )
    return result
