# visadesk/services/textprep.py
"""Normalization, tokenization, stopword filtering and sentence splitting.

Shared by the document text classifier (normalize + tokenize only) and the
RFE attack detector (full cleaning, one sentence per newline-delimited block).
"""
from __future__ import annotations

import re
from functools import lru_cache
from pathlib import Path
from typing import AbstractSet, Iterable, List, Optional

from visadesk.utils.files import sha256_hex

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
STOPWORDS_FILE = DATA_DIR / "stopwords.txt"

TokenStream = List[str]
SentenceList = List[TokenStream]

# a-z + ASCII whitespace survive; everything else becomes one space
_NON_KEPT = re.compile(r"[^a-z \t\n\r\f\v]")
_NEWLINES = re.compile(r"\n+")


def normalize(text: str) -> str:
    """Lowercase, then replace every character outside a-z/whitespace by a space.

    Newlines are kept as-is so sentence splitting still sees the line blocks.
    Digits are treated like any other non-letter, which is how numeric
    information gets removed.
    """
    if not text:
        return ""
    return _NON_KEPT.sub(" ", text.lower())


def tokenize(text: str) -> TokenStream:
    return text.split()


def clean_tokens(tokens: Iterable[str], stopwords: AbstractSet[str]) -> TokenStream:
    return [t for t in tokens if t not in stopwords]


def split_sentences(text: str, stopwords: AbstractSet[str]) -> SentenceList:
    sentences: SentenceList = []
    for block in _NEWLINES.split(normalize(text)):
        cleaned = clean_tokens(tokenize(block), stopwords)
        if cleaned:
            sentences.append(cleaned)
    return sentences


def document_tokens(text: str) -> TokenStream:
    """Token stream used by the document text classifier (no stopword removal)."""
    return tokenize(normalize(text))


@lru_cache(maxsize=8)
def _read_stopwords(path: str) -> tuple[frozenset[str], str]:
    raw = Path(path).read_text(encoding="utf-8")
    words = frozenset(w.strip() for w in raw.splitlines() if w.strip())
    return words, sha256_hex(raw)


def load_stopwords(path: Optional[Path] = None) -> frozenset[str]:
    return _read_stopwords(str(path or STOPWORDS_FILE))[0]


def stopwords_hash(path: Optional[Path] = None) -> str:
    """SHA-256 of the stopword file content, recorded next to trained artifacts."""
    return _read_stopwords(str(path or STOPWORDS_FILE))[1]
