"""End-to-end checks on the default seed-42 corpus."""
import json
from datetime import date

from visadesk.services.attackdetect import detect_in_text
from visadesk.services.corpusgen import load_documents, read_manifest
from visadesk.services.drafting import draft_response, load_store, load_template_library
from visadesk.services.evalharness import evaluate_attacks, evaluate_documents

TODAY = date(2022, 6, 1)
RFE3_TODAY = date(2023, 4, 3)


def test_ensemble_document_accuracy(trained_bundle, corpus_dir, corpus_split):
    _, test = corpus_split
    result = evaluate_documents(trained_bundle, load_documents(corpus_dir, test))
    assert result.accuracy >= 0.95
    assert result.accuracy >= max(result.image_accuracy, result.text_accuracy) - 0.02


def test_specialty_occupation_detection(bank, corpus_dir):
    rfes = read_manifest(corpus_dir).rfes
    result = evaluate_attacks(bank, 0.6, rfes, "specialty-occupation", corpus_dir)
    assert result.metrics.recall >= 0.85
    assert result.metrics.precision >= 0.70


def _rfe3(corpus_dir):
    manifest = read_manifest(corpus_dir)
    entry = manifest.rfes[3]
    return manifest, entry, (corpus_dir / entry.path).read_text(encoding="utf-8")


def test_rfe3_draft_matches_golden(bank, corpus_dir, fixtures_dir):
    manifest, entry, raw = _rfe3(corpus_dir)
    library = load_template_library(corpus_dir / manifest.templates)
    store = load_store(corpus_dir / manifest.beneficiaries)

    first = draft_response(raw, store, bank, library, tau=0.6, today=RFE3_TODAY)
    second = draft_response(raw, store, bank, library, tau=0.6, today=RFE3_TODAY)
    assert first.draft.text == second.draft.text
    assert first.manifest().model_dump() == second.manifest().model_dump()

    golden = (fixtures_dir / "golden" / "rfe3_draft.txt").read_text(encoding="utf-8")
    assert first.draft.text == golden
    assert first.draft.status == "complete"
    assert first.fields == entry.fields
    assert entry.planted_attacks == ["maintenance-of-status"]
    assert first.report.detected_ids == ("maintenance-of-status",)
    assert [s.template_id for s in first.draft.manifest] == ["mos-general"]


def _without(corpus_dir, manifest, case_number, tmp_path):
    records = json.loads((corpus_dir / manifest.beneficiaries).read_text(encoding="utf-8"))
    path = tmp_path / "beneficiaries.json"
    path.write_text(
        json.dumps([r for r in records if r["case_number"] != case_number]), encoding="utf-8"
    )
    return load_store(path)


def test_draft_with_stale_store_is_incomplete(bank, corpus_dir, tmp_path):
    manifest = read_manifest(corpus_dir)
    # premier RFE où l'attaque « specialty occupation » est détectée: son gabarit
    # générique a besoin des données du bénéficiaire
    for entry in manifest.rfes:
        raw = (corpus_dir / entry.path).read_text(encoding="utf-8")
        if "specialty-occupation" in detect_in_text(raw, bank, 0.6)[0].detected_ids:
            break
    store = _without(corpus_dir, manifest, entry.fields.case_number, tmp_path)

    library = load_template_library(corpus_dir / manifest.templates)
    result = draft_response(raw, store, bank, library, tau=0.6, today=TODAY)
    assert result.draft.status == "incomplete"
    assert result.record is None
    assert result.draft.missing_fields == ("degree", "field_of_study", "institution", "soc_code")
    assert result.manifest().missing_fields == list(result.draft.missing_fields)
    assert "[MISSING: soc_code]" in result.draft.text
    assert result.manifest().notes == [
        f"no beneficiary record for case number {entry.fields.case_number!r}"
    ]


def test_rfe3_with_stale_store_needs_no_beneficiary_data(bank, corpus_dir, tmp_path):
    manifest, entry, raw = _rfe3(corpus_dir)
    store = _without(corpus_dir, manifest, entry.fields.case_number, tmp_path)
    library = load_template_library(corpus_dir / manifest.templates)

    result = draft_response(raw, store, bank, library, tau=0.6, today=RFE3_TODAY)
    assert result.record is None
    # le gabarit « maintien du statut » n'utilise que les champs du RFE
    assert result.draft.missing_fields == ()
    assert result.draft.status == "complete"
    assert len(result.notes) == 1
