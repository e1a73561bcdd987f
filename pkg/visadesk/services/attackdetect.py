# visadesk/services/attackdetect.py
"""RFE attack detection by sentence similarity against an example bank.

An attack is reported when at least one RFE sentence and one bank example of
that attack have cosine similarity strictly greater than tau. IDF statistics
come from the bank alone, fitted once when the bank is loaded.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import AbstractSet, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from pydantic import ValidationError

from visadesk.core.errors import AttackDetectionError, BankError
from visadesk.schemas.bank import BankFile, BankRecord
from visadesk.schemas.records import AttackReportOut, EvidenceOut
from visadesk.services.textprep import (
    SentenceList,
    TokenStream,
    clean_tokens,
    load_stopwords,
    normalize,
    split_sentences,
    tokenize,
)
from visadesk.services.vectorspace import (
    SparseVector,
    Vocabulary,
    dense_matrix,
    fit_vocab,
    tfidf_vector,
)

logger = logging.getLogger(__name__)

BANK_N_RANGE = (1, 2, 3)
DEFAULT_TAU = 0.6


@dataclass(frozen=True)
class AttackType:
    id: str
    description: str


@dataclass(frozen=True, eq=False)
class BankExample:
    tokens: tuple[str, ...]
    attack: AttackType
    sentence: str


@dataclass(frozen=True, eq=False)
class ExampleBank:
    attacks: tuple[AttackType, ...]  # ordre de déclaration
    examples: tuple[BankExample, ...]
    vocab: Vocabulary
    vectors: tuple[SparseVector, ...]
    stopwords: frozenset[str]
    matrix: NDArray[np.float64]  # (|E|, V), une ligne par vecteur

    def attack(self, attack_id: str) -> AttackType:
        for a in self.attacks:
            if a.id == attack_id:
                return a
        raise AttackDetectionError(f"unknown attack id {attack_id!r}")

    @property
    def attack_ids(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.attacks)


@dataclass(frozen=True)
class Evidence:
    sentence_index: int
    example_index: int
    similarity: float


@dataclass(frozen=True)
class AttackReport:
    detected: tuple[AttackType, ...]
    evidence: tuple[Evidence, ...]
    threshold: float
    attack_of_example: tuple[str, ...] = ()

    @property
    def detected_ids(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.detected)

    def evidence_for(self, attack_id: str) -> tuple[Evidence, ...]:
        return tuple(
            e for e in self.evidence if self.attack_of_example[e.example_index] == attack_id
        )

    def to_record(self, rfe: Optional[str] = None) -> AttackReportOut:
        return AttackReportOut(
            rfe=rfe,
            threshold=self.threshold,
            detected=list(self.detected_ids),
            evidence=[
                EvidenceOut(
                    sentence_index=e.sentence_index,
                    example_index=e.example_index,
                    attack_id=self.attack_of_example[e.example_index],
                    similarity=e.similarity,
                )
                for e in self.evidence
            ],
        )


def clean_sentence(sentence: str, stopwords: AbstractSet[str]) -> TokenStream:
    return clean_tokens(tokenize(normalize(sentence)), stopwords)


def build_bank(
    records: Sequence[BankRecord],
    stopwords: Optional[AbstractSet[str]] = None,
    vocab: Optional[Vocabulary] = None,
) -> ExampleBank:
    """Clean, fit (unless ``vocab`` is given) and vectorize bank records."""
    stopwords = frozenset(load_stopwords() if stopwords is None else stopwords)
    if not records:
        raise BankError("example bank is empty")

    attacks: dict[str, AttackType] = {}
    survivors: dict[str, int] = {}
    examples: list[BankExample] = []
    for n, rec in enumerate(records):
        known = attacks.get(rec.attack_id)
        if known is None:
            known = attacks[rec.attack_id] = AttackType(rec.attack_id, rec.description)
            survivors[rec.attack_id] = 0
        elif known.description != rec.description:
            raise BankError(
                f"duplicate attack id {rec.attack_id!r} with conflicting descriptions"
            )
        tokens = clean_sentence(rec.sentence, stopwords)
        if not tokens:
            logger.warning(
                "bank record %d (%s) cleans to zero tokens; dropped", n, rec.attack_id
            )
            continue
        survivors[rec.attack_id] += 1
        examples.append(BankExample(tuple(tokens), known, rec.sentence))

    empty = [a for a, k in survivors.items() if k == 0]
    if empty:
        raise BankError(f"attack types without usable example sentences: {', '.join(empty)}")

    if vocab is None:
        vocab = fit_vocab([list(e.tokens) for e in examples], BANK_N_RANGE)
    vectors = tuple(tfidf_vector(list(e.tokens), vocab) for e in examples)
    matrix = dense_matrix(vectors, vocab.size)
    matrix.setflags(write=False)
    logger.info(
        "bank loaded: %d attacks, %d examples, %d n-grams",
        len(attacks),
        len(examples),
        vocab.size,
    )
    return ExampleBank(
        attacks=tuple(attacks.values()),
        examples=tuple(examples),
        vocab=vocab,
        vectors=vectors,
        stopwords=stopwords,
        matrix=matrix,
    )


def read_bank_records(path: Path) -> list[BankRecord]:
    raw = Path(path).read_text(encoding="utf-8")
    if not raw.strip():
        raise BankError(f"example bank {path} is empty")
    try:
        return BankFile.model_validate_json(raw).root
    except ValidationError as e:
        raise BankError(f"malformed example bank {path}: {e}") from e


def load_bank(path: Path, stopwords: Optional[AbstractSet[str]] = None) -> ExampleBank:
    return build_bank(read_bank_records(path), stopwords)


def similarity_matrix(rfe_sentences: SentenceList, bank: ExampleBank) -> NDArray[np.float64]:
    """M[i][j] = cosine(rfe sentence i, bank example j) in the bank's TF-IDF space."""
    if not rfe_sentences:
        return np.zeros((0, len(bank.examples)), dtype=np.float64)
    vecs = [tfidf_vector(list(s), bank.vocab) for s in rfe_sentences]
    R = dense_matrix(vecs, bank.vocab.size)
    # vecteurs unitaires (ou nuls): le produit scalaire est le cosinus
    return np.clip(R @ bank.matrix.T, 0.0, 1.0)


def detect_attacks(
    matrix: NDArray[np.float64], bank: ExampleBank, tau: float = DEFAULT_TAU
) -> AttackReport:
    if not 0.0 <= tau <= 1.0:
        raise AttackDetectionError(f"tau must lie in [0, 1], got {tau!r}")
    M = np.asarray(matrix, dtype=np.float64)
    if M.ndim != 2 or M.shape[1] != len(bank.examples):
        raise AttackDetectionError(
            f"similarity matrix shape {M.shape} does not match {len(bank.examples)} examples"
        )

    rows, cols = np.nonzero(M > tau)
    evidence = sorted(
        (Evidence(int(i), int(j), float(M[i, j])) for i, j in zip(rows, cols)),
        key=lambda e: (-e.similarity, e.sentence_index, e.example_index),
    )
    hit = {bank.examples[e.example_index].attack.id for e in evidence}
    detected = tuple(a for a in bank.attacks if a.id in hit)
    return AttackReport(
        detected=detected,
        evidence=tuple(evidence),
        threshold=tau,
        attack_of_example=tuple(e.attack.id for e in bank.examples),
    )


def detect_in_text(
    raw_text: str, bank: ExampleBank, tau: float = DEFAULT_TAU
) -> tuple[AttackReport, SentenceList]:
    sentences = split_sentences(raw_text, bank.stopwords)
    report = detect_attacks(similarity_matrix(sentences, bank), bank, tau)
    return report, sentences


def dump_report(report: AttackReport, rfe: Optional[str] = None) -> str:
    return report.to_record(rfe).model_dump_json(indent=2) + "\n"
