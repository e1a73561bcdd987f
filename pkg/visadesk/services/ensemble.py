# visadesk/services/ensemble.py
"""Entropy-weighted fusion of the image and text classifiers.

    H = -sum p lg p            (bits)
    w = 1 / max(H, EPSILON)
    P(y) = (w_img P_img(y) + w_txt P_txt(y)) / (w_img + w_txt)
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np

from visadesk.core.errors import EnsembleError, ModelFormatError
from visadesk.schemas.model_file import BundleInfo
from visadesk.schemas.records import ClassifyRecord
from visadesk.services.imagefeat import (
    FEATURIZER_VERSION,
    PageImage,
    featurizer_hash,
    image_features,
    load_pgm,
)
from visadesk.services.linclass import (
    ClassDistribution,
    ClassSet,
    LinearModel,
    TrainConfig,
    load_model,
    predict_proba,
    save_model,
    train,
)
from visadesk.services.textprep import document_tokens, stopwords_hash
from visadesk.services.vectorspace import (
    Vocabulary,
    dumps_vocab,
    fit_vocab,
    loads_vocab,
    tfidf_vector,
    vocab_hash,
)
from visadesk.utils.files import atomic_write_bytes, atomic_write_text

logger = logging.getLogger(__name__)

EPSILON = 0.001
TEXT_N_RANGE = (2, 3)

FusionMode = Literal["ensemble", "image-only", "text-only"]


@dataclass(frozen=True, eq=False)
class Document:
    doc_id: str
    pages: tuple[PageImage, ...]
    text: str
    label: Optional[str] = None
    path: Optional[Path] = None


@dataclass(frozen=True, eq=False)
class FusionTrace:
    mode: FusionMode
    fused: ClassDistribution
    predicted: str
    p_image: Optional[ClassDistribution] = None
    p_text: Optional[ClassDistribution] = None
    h_image: Optional[float] = None
    h_text: Optional[float] = None
    w_image: Optional[float] = None
    w_text: Optional[float] = None
    n_pages: int = 0

    def to_record(self, doc_id: str, path: Optional[str] = None) -> ClassifyRecord:
        return ClassifyRecord(
            doc_id=doc_id,
            path=path,
            mode=self.mode,
            label=self.predicted,
            fused=self.fused.as_dict(),
            p_image=self.p_image.as_dict() if self.p_image else None,
            p_text=self.p_text.as_dict() if self.p_text else None,
            h_image=self.h_image,
            h_text=self.h_text,
            w_image=self.w_image,
            w_text=self.w_text,
            n_pages=self.n_pages,
        )


# ---- Formula ----
def entropy(p: ClassDistribution) -> float:
    probs = p.probs[p.probs > 0]
    h = -float(np.sum(probs * np.log2(probs)))
    return min(max(h, 0.0), math.log2(len(p.classes)))


def confidence(h: float) -> float:
    if h < 0:
        raise EnsembleError(f"entropy must be >= 0, got {h!r}")
    return 1.0 / max(h, EPSILON)


def fuse(p_image: ClassDistribution, p_text: ClassDistribution) -> FusionTrace:
    if p_image.classes != p_text.classes:
        raise EnsembleError(
            f"class sets differ: {p_image.classes.labels} vs {p_text.classes.labels}"
        )
    h_img, h_txt = entropy(p_image), entropy(p_text)
    w_img, w_txt = confidence(h_img), confidence(h_txt)
    fused_p = (w_img * p_image.probs + w_txt * p_text.probs) / (w_img + w_txt)
    fused = ClassDistribution(p_image.classes, fused_p / fused_p.sum())
    return FusionTrace(
        mode="ensemble",
        fused=fused,
        predicted=fused.argmax(),
        p_image=p_image,
        p_text=p_text,
        h_image=h_img,
        h_text=h_txt,
        w_image=w_img,
        w_text=w_txt,
    )


def _single_branch(mode: FusionMode, p: ClassDistribution) -> FusionTrace:
    h = entropy(p)
    if mode == "image-only":
        return FusionTrace(mode, p, p.argmax(), p_image=p, h_image=h, w_image=confidence(h))
    return FusionTrace(mode, p, p.argmax(), p_text=p, h_text=h, w_text=confidence(h))


# ---- Branches ----
def image_distribution(
    pages: Sequence[PageImage], image_model: LinearModel
) -> ClassDistribution:
    """Mean of the per-page distributions, renormalized."""
    if not pages:
        raise EnsembleError("document has no pages")
    stacked = np.stack([predict_proba(image_model, image_features(pg)).probs for pg in pages])
    mean = stacked.mean(axis=0)
    return ClassDistribution(image_model.classes, mean / mean.sum())


def text_distribution(
    text: str, text_model: LinearModel, vocab: Vocabulary
) -> Optional[ClassDistribution]:
    tokens = document_tokens(text)
    if not tokens:
        return None
    return predict_proba(text_model, tfidf_vector(tokens, vocab))


def _check_models(image_model: LinearModel, text_model: LinearModel, vocab: Vocabulary):
    if image_model.classes != text_model.classes:
        raise EnsembleError("image and text models were trained on different class sets")
    if image_model.vocab_hash != featurizer_hash():
        raise EnsembleError("image model was trained with another featurizer")
    if text_model.vocab_hash != vocab_hash(vocab):
        raise EnsembleError("text model does not match the supplied vocabulary")


def classify_document(
    doc: Document,
    image_model: LinearModel,
    text_model: LinearModel,
    vocab: Vocabulary,
) -> FusionTrace:
    _check_models(image_model, text_model, vocab)
    p_image = image_distribution(doc.pages, image_model) if doc.pages else None
    p_text = text_distribution(doc.text, text_model, vocab)

    if p_image is not None and p_text is not None:
        trace = fuse(p_image, p_text)
    elif p_image is not None:
        trace = _single_branch("image-only", p_image)
    elif p_text is not None:
        trace = _single_branch("text-only", p_text)
    else:
        raise EnsembleError(f"document {doc.doc_id!r} has neither pages nor text")

    if trace.n_pages != len(doc.pages):
        trace = replace(trace, n_pages=len(doc.pages))
    return trace


# ---- Documents on disk ----
# <doc dir>/page-01.pgm, page-02.pgm, ...  +  clean.txt / degraded.txt (or text.txt)
def load_document_dir(
    path: Path, text_channel: str = "degraded", label: Optional[str] = None
) -> Document:
    path = Path(path)
    if not path.is_dir():
        raise EnsembleError(f"not a document directory: {path}")
    pages = tuple(load_pgm(p) for p in sorted(path.glob("page-*.pgm")))
    text = ""
    for name in (f"{text_channel}.txt", "text.txt"):
        candidate = path / name
        if candidate.is_file():
            text = candidate.read_text(encoding="utf-8")
            break
    return Document(doc_id=path.name, pages=pages, text=text, label=label, path=path)


# ---- Model bundle ----
@dataclass(frozen=True, eq=False)
class ModelBundle:
    image_model: LinearModel
    text_model: LinearModel
    vocab: Vocabulary
    info: BundleInfo

    IMAGE_FILE = "image_model.json"
    TEXT_FILE = "text_model.json"
    VOCAB_FILE = "text_vocab.txt"
    INFO_FILE = "bundle.json"

    @property
    def classes(self) -> ClassSet:
        return self.image_model.classes

    def classify(self, doc: Document) -> FusionTrace:
        return classify_document(doc, self.image_model, self.text_model, self.vocab)

    def save(self, out_dir: Path) -> Path:
        out_dir = Path(out_dir)
        atomic_write_text(out_dir / self.VOCAB_FILE, dumps_vocab(self.vocab))
        atomic_write_bytes(out_dir / self.IMAGE_FILE, save_model(self.image_model))
        atomic_write_bytes(out_dir / self.TEXT_FILE, save_model(self.text_model))
        atomic_write_text(
            out_dir / self.INFO_FILE,
            self.info.model_dump_json(indent=2) + "\n",
        )
        return out_dir

    @classmethod
    def load(cls, bundle_dir: Path) -> "ModelBundle":
        bundle_dir = Path(bundle_dir)
        try:
            info = BundleInfo.model_validate_json(
                (bundle_dir / cls.INFO_FILE).read_text(encoding="utf-8")
            )
        except ValueError as e:
            raise ModelFormatError(f"corrupt bundle metadata: {e}") from e
        vocab = loads_vocab((bundle_dir / cls.VOCAB_FILE).read_text(encoding="utf-8"))
        text_model = load_model((bundle_dir / cls.TEXT_FILE).read_bytes(), vocab_hash(vocab))
        image_model = load_model((bundle_dir / cls.IMAGE_FILE).read_bytes(), featurizer_hash())
        if info.stopwords_hash != stopwords_hash():
            logger.warning("bundle was built with a different stopword list")
        bundle = cls(image_model, text_model, vocab, info)
        _check_models(image_model, text_model, vocab)
        return bundle


def train_bundle(
    documents: Sequence[Document],
    classes: Optional[ClassSet] = None,
    config: Optional[TrainConfig] = None,
    config_hash: str = "",
) -> ModelBundle:
    """Train the image head on every page and the text head on every document."""
    config = config or TrainConfig()
    labelled = [d for d in documents if d.label is not None]
    if not labelled:
        raise EnsembleError("no labelled training documents")
    if classes is None:
        classes = ClassSet(tuple(sorted({d.label for d in labelled})))

    # 1) tête image: une ligne par page
    image_data = [(image_features(pg), d.label) for d in labelled for pg in d.pages]
    logger.info("training image head on %d pages", len(image_data))
    image_model = train(
        image_data, classes, config, feature_kind="dense", vocab_hash=featurizer_hash()
    )

    # 2) tête texte: TF-IDF n-grammes (2, 3) par document
    tokenized = [(document_tokens(d.text), d.label) for d in labelled]
    tokenized = [(t, y) for t, y in tokenized if t]
    vocab = fit_vocab([t for t, _ in tokenized], TEXT_N_RANGE)
    text_data = [(tfidf_vector(t, vocab), y) for t, y in tokenized]
    logger.info("training text head on %d documents (%d n-grams)", len(text_data), vocab.size)
    text_model = train(
        text_data,
        classes,
        config,
        n_features=vocab.size,
        feature_kind="sparse",
        vocab_hash=vocab_hash(vocab),
    )

    info = BundleInfo(
        classes=list(classes.labels),
        text_n_range=list(TEXT_N_RANGE),
        featurizer=FEATURIZER_VERSION,
        stopwords_hash=stopwords_hash(),
        config_hash=config_hash,
        train_documents=len(labelled),
        train_pages=len(image_data),
    )
    return ModelBundle(image_model, text_model, vocab, info)
