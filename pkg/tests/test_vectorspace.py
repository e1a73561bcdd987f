import math
import random

import numpy as np
import pytest

from visadesk.core.errors import VectorSpaceError
from visadesk.services.vectorspace import (
    SparseVector,
    cosine,
    dumps_vocab,
    fit_vocab,
    loads_vocab,
    ngrams,
    tfidf_vector,
    vocab_hash,
)


def test_ngrams():
    assert ngrams(["a", "b", "c"], {2, 3}) == ["a b", "b c", "a b c"]
    assert ngrams(["a"], {2, 3}) == []
    assert ngrams(["a", "b"], {1, 2, 3}) == ["a", "b", "a b"]


def test_ngrams_rejects_zero():
    with pytest.raises(VectorSpaceError):
        ngrams(["a"], {0, 1})


def test_fit_vocab_counts_documents():
    v = fit_vocab([["a", "b"], ["a", "c"]], {1})
    assert set(v.ngram_to_index) == {"a", "b", "c"}
    df = {g: v.doc_freq[i] for g, i in v.ngram_to_index.items()}
    assert df == {"a": 2, "b": 1, "c": 1}
    assert v.corpus_size == 2

    v = fit_vocab([["a", "a"]], {1})
    assert v.doc_freq == (1,)


def test_fit_vocab_degenerate_and_empty():
    v = fit_vocab([[]], {1})
    assert v.size == 0 and v.corpus_size == 1
    with pytest.raises(VectorSpaceError):
        fit_vocab([], {1})


def test_tfidf_reference_example():
    v = fit_vocab([["a", "b"], ["a", "c"]], {1})
    vec = dict(tfidf_vector(["a", "b", "b"], v).entries())
    a, b = v.ngram_to_index["a"], v.ngram_to_index["b"]
    raw_a = 1 * (math.log(3 / 3) + 1)
    raw_b = 2 * (math.log(3 / 2) + 1)
    norm = math.hypot(raw_a, raw_b)
    assert vec[a] == pytest.approx(raw_a / norm, abs=1e-12)
    assert vec[b] == pytest.approx(raw_b / norm, abs=1e-12)
    assert vec[a] == pytest.approx(0.3352, abs=1e-4)
    assert vec[b] == pytest.approx(0.9421, abs=1e-4)


def test_tfidf_unknown_and_single_ngram():
    v = fit_vocab([["a", "b"], ["a", "c"]], {1})
    z = tfidf_vector(["zzz"], v)
    assert z.is_zero and z.dim == v.size
    one = tfidf_vector(["c", "c", "c"], v)
    assert one.entries() == [(v.ngram_to_index["c"], 1.0)]


def test_tfidf_matches_sklearn():
    text = pytest.importorskip("sklearn.feature_extraction.text")
    docs = ["a b c a", "b c d", "a d e e", "c c b"]
    corpus = [d.split() for d in docs]
    vocab = fit_vocab(corpus, {1, 2})
    ref = text.TfidfVectorizer(
        ngram_range=(1, 2), token_pattern=r"\S+", smooth_idf=True, norm="l2", lowercase=False
    )
    matrix = ref.fit_transform(docs).toarray()
    names = list(ref.get_feature_names_out())
    for row, tokens in enumerate(corpus):
        dense = tfidf_vector(tokens, vocab).to_dense()
        for g, i in vocab.ngram_to_index.items():
            assert dense[i] == pytest.approx(matrix[row, names.index(g)], abs=1e-12)


def test_cosine_rules():
    v = SparseVector.from_mapping({0: 0.3, 4: 1.2}, 6)
    w = SparseVector.from_mapping({1: 2.0}, 6)
    assert cosine(v, v) == pytest.approx(1.0, abs=1e-12)
    assert cosine(v, w) == 0.0
    assert cosine(SparseVector.zeros(6), v) == 0.0
    with pytest.raises(VectorSpaceError):
        cosine(v, SparseVector.zeros(7))


def test_cosine_is_symmetric_and_bounded():
    rng = np.random.default_rng(7)
    for _ in range(50):
        a = SparseVector.from_mapping({int(i): float(rng.random()) for i in rng.choice(10, 4)}, 10)
        b = SparseVector.from_mapping({int(i): float(rng.random()) for i in rng.choice(10, 4)}, 10)
        assert cosine(a, b) == pytest.approx(cosine(b, a), abs=1e-15)
        assert 0.0 <= cosine(a, b) <= 1.0


def test_vocab_file_format():
    v = fit_vocab([["b", "a"], ["a", "c"]], {1, 2})
    text = dumps_vocab(v)
    lines = text.split("\n")
    assert lines[0] == "visadesk-vocab 1"
    assert lines[1] == "corpus_size\t2"
    assert lines[2] == "n_range\t1,2"
    assert lines[3] == "0\t2\ta"
    assert text.endswith("\n")

    back = loads_vocab(text)
    assert back.ngram_to_index == v.ngram_to_index
    assert back.doc_freq == v.doc_freq
    assert vocab_hash(back) == vocab_hash(v)


@pytest.mark.parametrize(
    "bad",
    ["not-a-vocab 1\n", "visadesk-vocab 9\ncorpus_size\t1\nn_range\t1\n", "visadesk-vocab 1\n"],
)
def test_loads_vocab_rejects_corrupt_files(bad):
    with pytest.raises(VectorSpaceError):
        loads_vocab(bad)


def _grams(tokens, ns):
    return [" ".join(tokens[i : i + n]) for n in ns for i in range(len(tokens) - n + 1)]


def test_tfidf_matches_dense_reference_on_random_corpora():
    rng = random.Random(23)
    words = ["a", "b", "c", "d", "e", "f"]
    for _ in range(200):
        ns = rng.choice([(1,), (1, 2), (1, 2, 3)])
        corpus = [rng.choices(words, k=rng.randint(1, 6)) for _ in range(rng.randint(1, 10))]
        vocab = fit_vocab(corpus, ns)

        grams = sorted({g for doc in corpus for g in _grams(doc, ns)})
        index = {g: i for i, g in enumerate(grams)}
        assert dict(vocab.ngram_to_index) == index
        df = np.array([sum(g in set(_grams(doc, ns)) for doc in corpus) for g in grams])
        idf = np.log((1 + len(corpus)) / (1 + df)) + 1

        queries = corpus + [rng.choices(words + ["z"], k=rng.randint(1, 6)) for _ in range(3)]
        dense = []
        for doc in queries:
            tf = np.zeros(len(grams))
            for g in _grams(doc, ns):
                if g in index:
                    tf[index[g]] += 1
            w = tf * idf
            norm = np.linalg.norm(w)
            dense.append(w / norm if norm > 0 else w)

        vecs = [tfidf_vector(doc, vocab) for doc in queries]
        for v, d in zip(vecs, dense):
            assert np.abs(v.to_dense() - d).max() <= 1e-9
        for i in range(len(queries)):
            for j in range(len(queries)):
                ref = float(dense[i] @ dense[j])
                assert cosine(vecs[i], vecs[j]) == pytest.approx(min(1.0, ref), abs=1e-9)


def test_cosine_is_scale_invariant():
    rng = np.random.default_rng(5)
    for _ in range(100):
        a = SparseVector.from_mapping({int(i): float(rng.random()) for i in rng.choice(12, 5)}, 12)
        b = SparseVector.from_mapping({int(i): float(rng.random()) for i in rng.choice(12, 5)}, 12)
        alpha, beta = float(rng.uniform(0.01, 100.0)), float(rng.uniform(0.01, 100.0))
        assert cosine(a.scale(alpha), b) == pytest.approx(cosine(a, b), abs=1e-12)
        assert cosine(a.scale(alpha), b.scale(beta)) == pytest.approx(cosine(a, b), abs=1e-12)
    with pytest.raises(VectorSpaceError):
        a.scale(0.0)
