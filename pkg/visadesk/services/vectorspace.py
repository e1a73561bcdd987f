# visadesk/services/vectorspace.py
"""Word n-grams, vocabulary fitting, TF-IDF weighting and cosine similarity.

Weighting: tf = raw count, idf = ln((1 + N) / (1 + df)) + 1, then L2 normalization.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, List, Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from visadesk.core.errors import VectorSpaceError
from visadesk.utils.files import sha256_hex

logger = logging.getLogger(__name__)

VOCAB_MAGIC = "visadesk-vocab"
VOCAB_VERSION = 1


def _check_n_range(n_range: Iterable[int]) -> tuple[int, ...]:
    ns = tuple(sorted(set(int(n) for n in n_range)))
    if not ns or ns[0] < 1:
        raise VectorSpaceError(f"n-gram sizes must be >= 1, got {ns!r}")
    return ns


def ngrams(tokens: Sequence[str], n_range: Iterable[int]) -> List[str]:
    """All contiguous n-grams, grouped by ascending n, document order inside a group."""
    out: List[str] = []
    for n in _check_n_range(n_range):
        for i in range(len(tokens) - n + 1):
            out.append(" ".join(tokens[i : i + n]))
    return out


@dataclass(frozen=True)
class Vocabulary:
    ngram_to_index: Mapping[str, int]
    doc_freq: tuple[int, ...]
    corpus_size: int
    n_range: tuple[int, ...]
    idf: NDArray[np.float64] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.corpus_size < 1:
            raise VectorSpaceError("corpus_size must be >= 1")
        if len(self.doc_freq) != len(self.ngram_to_index):
            raise VectorSpaceError("doc_freq length does not match vocabulary size")
        if sorted(self.ngram_to_index.values()) != list(range(len(self.doc_freq))):
            raise VectorSpaceError("vocabulary indices must be dense 0..V-1")
        if any(df < 1 or df > self.corpus_size for df in self.doc_freq):
            raise VectorSpaceError("document frequencies must lie in [1, corpus_size]")
        object.__setattr__(self, "n_range", _check_n_range(self.n_range))
        df = np.asarray(self.doc_freq, dtype=np.float64)
        idf = np.log((1.0 + self.corpus_size) / (1.0 + df)) + 1.0
        idf.setflags(write=False)
        object.__setattr__(self, "idf", idf)

    @property
    def size(self) -> int:
        return len(self.doc_freq)

    def __len__(self) -> int:
        return self.size


@dataclass(frozen=True, eq=False)
class SparseVector:
    """Sorted (index, weight) entries over a vocabulary of size ``dim``."""

    indices: NDArray[np.int64]
    weights: NDArray[np.float64]
    dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.float64)
        if idx.shape != w.shape or idx.ndim != 1:
            raise VectorSpaceError("indices and weights must be 1-d and aligned")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.dim or np.any(np.diff(idx) <= 0):
                raise VectorSpaceError("indices must be strictly increasing and < dim")
            if np.any(w <= 0) or not np.all(np.isfinite(w)):
                raise VectorSpaceError("weights must be finite and > 0")
        idx.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, dim: int) -> "SparseVector":
        return cls(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64), dim)

    @classmethod
    def from_mapping(cls, entries: Mapping[int, float], dim: int) -> "SparseVector":
        items = sorted((i, w) for i, w in entries.items() if w != 0)
        return cls(
            np.array([i for i, _ in items], dtype=np.int64),
            np.array([w for _, w in items], dtype=np.float64),
            dim,
        )

    @property
    def is_zero(self) -> bool:
        return self.indices.size == 0

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def norm(self) -> float:
        return float(np.linalg.norm(self.weights)) if self.nnz else 0.0

    def scale(self, alpha: float) -> "SparseVector":
        if alpha <= 0:
            raise VectorSpaceError("scale factor must be > 0")
        return SparseVector(self.indices, self.weights * alpha, self.dim)

    def to_dense(self) -> NDArray[np.float64]:
        out = np.zeros(self.dim, dtype=np.float64)
        out[self.indices] = self.weights
        return out

    def entries(self) -> list[tuple[int, float]]:
        return list(zip(self.indices.tolist(), self.weights.tolist()))


def fit_vocab(corpus: Sequence[Sequence[str]], n_range: Iterable[int]) -> Vocabulary:
    ns = _check_n_range(n_range)
    if len(corpus) == 0:
        raise VectorSpaceError("cannot fit a vocabulary on an empty corpus")
    df: Counter[str] = Counter()
    for tokens in corpus:
        df.update(set(ngrams(tokens, ns)))
    ordered = sorted(df)
    vocab = Vocabulary(
        ngram_to_index={g: i for i, g in enumerate(ordered)},
        doc_freq=tuple(df[g] for g in ordered),
        corpus_size=len(corpus),
        n_range=ns,
    )
    logger.debug("vocabulary fitted: %d n-grams over %d documents", vocab.size, len(corpus))
    return vocab


def tfidf_vector(tokens: Sequence[str], vocab: Vocabulary) -> SparseVector:
    counts: Counter[int] = Counter()
    for g in ngrams(tokens, vocab.n_range):
        i = vocab.ngram_to_index.get(g)
        if i is not None:
            counts[i] += 1
    if not counts:
        return SparseVector.zeros(vocab.size)
    idx = np.array(sorted(counts), dtype=np.int64)
    w = np.array([counts[i] for i in idx.tolist()], dtype=np.float64) * vocab.idf[idx]
    return SparseVector(idx, w / np.linalg.norm(w), vocab.size)


def cosine(u: SparseVector, v: SparseVector) -> float:
    if u.dim != v.dim:
        raise VectorSpaceError(f"dimension mismatch: {u.dim} != {v.dim}")
    if u.is_zero or v.is_zero:
        return 0.0
    _, iu, iv = np.intersect1d(u.indices, v.indices, assume_unique=True, return_indices=True)
    if iu.size == 0:
        return 0.0
    dot = float(np.dot(u.weights[iu], v.weights[iv]))
    sim = dot / (u.norm() * v.norm())
    return min(1.0, max(0.0, sim))


def dense_matrix(vectors: Sequence[SparseVector], dim: int) -> NDArray[np.float64]:
    """Stack sparse vectors into an (n, dim) array."""
    out = np.zeros((len(vectors), dim), dtype=np.float64)
    for row, v in enumerate(vectors):
        if v.dim != dim:
            raise VectorSpaceError(f"dimension mismatch: {v.dim} != {dim}")
        out[row, v.indices] = v.weights
    return out


# ---- Serialization ----
# Line 1: "visadesk-vocab 1"
# Line 2: "corpus_size\t<N>"
# Line 3: "n_range\t<n1>,<n2>,..."
# Then one line per n-gram in index order: "<index>\t<doc_freq>\t<ngram>"
# UTF-8, "\n" line endings, trailing newline after the last line.


def dumps_vocab(vocab: Vocabulary) -> str:
    lines = [
        f"{VOCAB_MAGIC} {VOCAB_VERSION}",
        f"corpus_size\t{vocab.corpus_size}",
        "n_range\t" + ",".join(str(n) for n in vocab.n_range),
    ]
    by_index = sorted(vocab.ngram_to_index.items(), key=lambda kv: kv[1])
    lines.extend(f"{i}\t{vocab.doc_freq[i]}\t{g}" for g, i in by_index)
    return "\n".join(lines) + "\n"


def loads_vocab(text: str) -> Vocabulary:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    try:
        magic, version = lines[0].split(" ")
        if magic != VOCAB_MAGIC:
            raise VectorSpaceError(f"not a vocabulary file (magic {magic!r})")
        if int(version) != VOCAB_VERSION:
            raise VectorSpaceError(f"unsupported vocabulary version {version}")
        key1, corpus_size = lines[1].split("\t")
        key2, n_range = lines[2].split("\t")
        if (key1, key2) != ("corpus_size", "n_range"):
            raise VectorSpaceError("corrupt vocabulary header")
        mapping: dict[str, int] = {}
        doc_freq: list[int] = []
        for expected, line in enumerate(lines[3:]):
            idx, df, gram = line.split("\t", 2)
            if int(idx) != expected:
                raise VectorSpaceError(f"vocabulary line out of order at index {idx}")
            mapping[gram] = expected
            doc_freq.append(int(df))
    except VectorSpaceError:
        raise
    except (IndexError, ValueError) as e:
        raise VectorSpaceError(f"corrupt vocabulary file: {e}") from e
    return Vocabulary(
        ngram_to_index=mapping,
        doc_freq=tuple(doc_freq),
        corpus_size=int(corpus_size),
        n_range=tuple(int(n) for n in n_range.split(",")),
    )


def vocab_hash(vocab: Vocabulary) -> str:
    return sha256_hex(dumps_vocab(vocab))
