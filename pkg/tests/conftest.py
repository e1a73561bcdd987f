# tests/conftest.py
from pathlib import Path

import pytest

from visadesk.core.config import Settings
from visadesk.schemas.corpus import CorpusConfig
from visadesk.services.attackdetect import load_bank
from visadesk.services.corpusgen import (
    BANK_FILE,
    generate_corpus,
    load_documents,
    read_manifest,
    split_documents,
)
from visadesk.services.ensemble import train_bundle
from visadesk.services.linclass import TrainConfig
from visadesk.services.textprep import load_stopwords

FIXTURES = Path(__file__).resolve().parent / "fixtures"


# -----------------------------
# Fixtures partagées
# -----------------------------
@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def stopwords() -> frozenset:
    return load_stopwords()


@pytest.fixture(scope="session")
def bank(stopwords):
    return load_bank(BANK_FILE, stopwords)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory) -> Path:
    """Seed-42 corpus with the default configuration (2 classes x 100 docs, 49 RFEs)."""
    out = tmp_path_factory.mktemp("corpus42")
    generate_corpus(CorpusConfig(seed=42), out)
    return out


@pytest.fixture(scope="session")
def corpus_split(corpus_dir):
    manifest = read_manifest(corpus_dir)
    s = Settings()
    return split_documents(manifest.documents, s.train_fraction, s.seed)


@pytest.fixture(scope="session")
def trained_bundle(corpus_dir, corpus_split):
    train, _ = corpus_split
    s = Settings()
    docs = load_documents(corpus_dir, train, s.text_channel)
    config = TrainConfig(
        l2=s.l2, learning_rate=s.learning_rate, max_iters=s.max_iters, grad_tol=s.grad_tol
    )
    return train_bundle(docs, config=config)
