import json
import logging
import random

import numpy as np
import pytest

from visadesk.core.errors import AttackDetectionError, BankError
from visadesk.schemas.bank import BankRecord
from visadesk.services.attackdetect import (
    BANK_N_RANGE,
    build_bank,
    detect_attacks,
    detect_in_text,
    dump_report,
    load_bank,
    similarity_matrix,
)
from visadesk.services.textprep import split_sentences
from visadesk.services.vectorspace import cosine, fit_vocab, tfidf_vector

WORDS = ["alpha", "beta", "gamma", "delta", "omega", "sigma", "kappa", "theta"]


def _rec(attack: str, sentence: str, description: str = "") -> BankRecord:
    return BankRecord(attack_id=attack, description=description or attack, sentence=sentence)


def _oracle(sentences, bank, tau):
    """Exhaustive pairwise reference: sparse cosine for every pair, strict >."""
    vecs = [tfidf_vector(s, bank.vocab) for s in sentences]
    M = [[cosine(v, e) for e in bank.vectors] for v in vecs]
    pairs = [
        (i, j, M[i][j])
        for i in range(len(sentences))
        for j in range(len(bank.examples))
        if M[i][j] > tau
    ]
    detected = {bank.examples[j].attack.id for _, j, _ in pairs}
    return M, detected, pairs


# ---- Bank ----
def test_bank_two_attacks_three_sentences(stopwords):
    records = [_rec("x", f"visa petition alpha {w}") for w in WORDS[:3]] + [
        _rec("y", f"employer client beta {w}") for w in WORDS[3:6]
    ]
    bank = build_bank(records, stopwords)
    assert len(bank.vectors) == 6
    assert bank.attack_ids == ("x", "y")
    assert bank.vocab.n_range == (1, 2, 3)


def test_bank_drops_empty_sentences(stopwords, caplog):
    records = [_rec("x", "valid petition"), _rec("x", "the of 2021 !!"), _rec("y", "other claim")]
    with caplog.at_level(logging.WARNING):
        bank = build_bank(records, stopwords)
    assert len(bank.examples) == 2
    assert "zero tokens" in caplog.text

    with pytest.raises(BankError):
        build_bank([_rec("x", "valid petition"), _rec("y", "and the")], stopwords)


def test_bank_errors(tmp_path, stopwords):
    with pytest.raises(BankError):
        build_bank([], stopwords)
    with pytest.raises(BankError):
        build_bank([_rec("x", "one thing", "A"), _rec("x", "two things", "B")], stopwords)

    empty = tmp_path / "bank.json"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(BankError):
        load_bank(empty)
    empty.write_text('[{"attack_id": "Bad Id", "description": "d", "sentence": "s"}]')
    with pytest.raises(BankError):
        load_bank(empty)


def test_packaged_bank(bank):
    assert bank.attack_ids == (
        "specialty-occupation",
        "beneficiary-qualifications",
        "employer-employee",
        "maintenance-of-status",
    )
    assert all(len(e.tokens) >= 8 for e in bank.examples)
    assert bank.attack("employer-employee").description
    with pytest.raises(AttackDetectionError, match="unknown attack id"):
        bank.attack("visa-fraud")


# ---- Similarity ----
def test_identical_sentence_scores_one(bank):
    sentence = bank.examples[0].sentence
    M = similarity_matrix(split_sentences(sentence, bank.stopwords), bank)
    assert M.shape == (1, len(bank.examples))
    assert M[0, 0] == pytest.approx(1.0, abs=1e-9)


def test_unrelated_sentence_scores_zero(bank):
    M = similarity_matrix([["zyx", "wvu"]], bank)
    assert np.all(M == 0.0)
    assert similarity_matrix([], bank).shape == (0, len(bank.examples))


def test_matrix_matches_pairwise_oracle(bank):
    text = "\n".join(e.sentence for e in bank.examples[::9][:3])
    sentences = split_sentences(text, bank.stopwords)
    M = similarity_matrix(sentences, bank)
    ref, _, _ = _oracle(sentences, bank, 0.6)
    assert np.allclose(M, np.array(ref), atol=1e-9)


# ---- Detection ----
def test_detect_single_hit(bank):
    M = np.zeros((2, len(bank.examples)))
    M[1, 0] = 1.0
    report = detect_attacks(M, bank, 0.6)
    assert report.detected_ids == ("specialty-occupation",)
    assert [(e.sentence_index, e.example_index) for e in report.evidence] == [(1, 0)]


def test_detect_is_strict(bank):
    M = np.full((3, len(bank.examples)), 0.6)
    M[0, 0] = 0.3
    report = detect_attacks(M, bank, 0.6)
    assert report.detected == ()
    assert report.evidence == ()


def test_detect_same_attack_twice(bank):
    M = np.zeros((3, len(bank.examples)))
    M[0, 1] = 0.7
    M[2, 3] = 0.9
    report = detect_attacks(M, bank, 0.6)
    assert report.detected_ids == ("specialty-occupation",)
    assert [e.similarity for e in report.evidence] == [0.9, 0.7]
    assert len(report.evidence_for("specialty-occupation")) == 2


def test_detect_tau_bounds(bank):
    M = np.ones((1, len(bank.examples)))
    assert detect_attacks(M, bank, 1.0).detected == ()
    assert len(detect_attacks(M, bank, 0.0).detected) == 4
    with pytest.raises(AttackDetectionError):
        detect_attacks(M, bank, 1.5)
    with pytest.raises(AttackDetectionError):
        detect_attacks(np.ones((1, 2)), bank, 0.6)


def test_detected_follow_bank_order(bank):
    M = np.zeros((1, len(bank.examples)))
    last = len(bank.examples) - 1
    M[0, last] = 0.95
    M[0, 0] = 0.8
    report = detect_attacks(M, bank, 0.6)
    assert report.detected_ids == ("specialty-occupation", "maintenance-of-status")
    assert report.evidence[0].example_index == last


def test_detection_matches_oracle_on_random_instances():
    rng = random.Random(77)
    for _ in range(200):
        n_examples = rng.randint(1, 5)
        records = [
            _rec(rng.choice(["p", "q", "r"]), " ".join(rng.choices(WORDS, k=rng.randint(1, 4))))
            for _ in range(n_examples)
        ]
        bank = build_bank(records, stopwords=frozenset())
        sentences = [rng.choices(WORDS, k=rng.randint(1, 4)) for _ in range(rng.randint(0, 5))]
        tau = rng.choice([0.0, 0.3, 0.5, 0.6, 0.9, 1.0])

        # matrices avec égalités exactes sur tau
        grid = np.array(rng.choices([0.0, 0.25, 0.5, 0.6, 0.75, 1.0], k=3 * n_examples))
        M = grid.reshape(3, n_examples)
        hits = {bank.examples[j].attack.id for i, j in zip(*np.nonzero(M > 0.6))}
        assert set(detect_attacks(M, bank, 0.6).detected_ids) == hits

        ref, detected, pairs = _oracle(sentences, bank, tau)
        if 0.0 < tau < 1.0 and any(abs(v - tau) < 1e-9 for row in ref for v in row):
            continue  # égalité à l'ulp près: le sens de la comparaison dépend de l'arrondi
        report = detect_attacks(similarity_matrix(sentences, bank), bank, tau)
        assert set(report.detected_ids) == detected
        assert sorted((e.sentence_index, e.example_index) for e in report.evidence) == sorted(
            (i, j) for i, j, _ in pairs
        )


def _random_instance(rng):
    records = [
        _rec(rng.choice(["p", "q", "r"]), " ".join(rng.choices(WORDS, k=rng.randint(1, 4))))
        for _ in range(rng.randint(1, 6))
    ]
    sentences = [rng.choices(WORDS, k=rng.randint(1, 4)) for _ in range(rng.randint(1, 6))]
    return records, sentences


def test_detection_is_monotone_in_tau():
    rng = random.Random(31)
    taus = [0.0, 0.2, 0.4, 0.5, 0.6, 0.75, 0.9, 1.0]
    for _ in range(100):
        records, sentences = _random_instance(rng)
        bank = build_bank(records, stopwords=frozenset())
        M = similarity_matrix(sentences, bank)
        reports = [detect_attacks(M, bank, t) for t in taus]
        for low, high in zip(reports, reports[1:]):
            assert set(high.detected_ids) <= set(low.detected_ids)
            pairs = {(e.sentence_index, e.example_index) for e in low.evidence}
            assert {(e.sentence_index, e.example_index) for e in high.evidence} <= pairs


def test_sentence_order_does_not_change_detection():
    rng = random.Random(37)
    for _ in range(100):
        records, sentences = _random_instance(rng)
        bank = build_bank(records, stopwords=frozenset())
        order = list(range(len(sentences)))
        rng.shuffle(order)
        shuffled = [sentences[i] for i in order]
        M = similarity_matrix(sentences, bank)
        if np.any(np.abs(M - 0.5) < 1e-9):
            continue  # égalité à l'ulp près

        before = detect_attacks(M, bank, 0.5)
        after = detect_attacks(similarity_matrix(shuffled, bank), bank, 0.5)
        assert after.detected_ids == before.detected_ids
        assert {(order[e.sentence_index], e.example_index) for e in after.evidence} == {
            (e.sentence_index, e.example_index) for e in before.evidence
        }


def test_more_examples_never_lose_attacks_with_fixed_vocabulary():
    rng = random.Random(41)
    for _ in range(100):
        records, sentences = _random_instance(rng)
        extra, _ = _random_instance(rng)
        # vocabulaire figé sur l'ensemble des deux banques
        vocab = fit_vocab([r.sentence.split() for r in records + extra], BANK_N_RANGE)
        small = build_bank(records, stopwords=frozenset(), vocab=vocab)
        big = build_bank(records + extra, stopwords=frozenset(), vocab=vocab)
        assert small.vocab is big.vocab
        M_small = similarity_matrix(sentences, small)
        M_big = similarity_matrix(sentences, big)
        for tau in (0.3, 0.6):
            if np.any(np.abs(M_big - tau) < 1e-9):
                continue
            a = detect_attacks(M_small, small, tau)
            b = detect_attacks(M_big, big, tau)
            assert set(a.detected_ids) <= set(b.detected_ids)


def test_detect_in_text_and_report(bank):
    raw = "Case Number: EAC-21-123-45678\n" + bank.examples[0].sentence + "\n"
    report, sentences = detect_in_text(raw, bank)
    assert len(sentences) == 2
    assert report.detected_ids == ("specialty-occupation",)
    assert report.threshold == 0.6
    record = json.loads(dump_report(report, "rfe.txt"))
    assert record["rfe"] == "rfe.txt"
    assert record["evidence"][0]["attack_id"] == "specialty-occupation"
    assert record["evidence"][0]["sentence_index"] == 1
