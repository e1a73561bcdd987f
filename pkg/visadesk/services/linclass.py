# visadesk/services/linclass.py
"""Multinomial logistic regression used for both classifier heads.

The image head sees dense 1024-d page features, the text head sparse TF-IDF
vectors. Training is full-batch gradient descent from zero weights, so the
result is deterministic for a given dataset and config.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, Field, ValidationError

from visadesk.core.errors import (
    LinearModelError,
    ModelFormatError,
    ModelVersionError,
    VocabularyMismatchError,
)
from visadesk.schemas.model_file import MODEL_FORMAT_VERSION, LinearModelFile
from visadesk.services.vectorspace import SparseVector

logger = logging.getLogger(__name__)

FeatureKind = Literal["dense", "sparse"]
Features = Union[NDArray[np.float64], SparseVector]
Example = Tuple[Features, str]

PROB_TOL = 1e-9


@dataclass(frozen=True)
class ClassSet:
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(self.labels)
        if len(labels) < 2:
            raise LinearModelError("a class set needs at least 2 labels")
        if len(set(labels)) != len(labels):
            raise LinearModelError(f"duplicate class labels in {labels!r}")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise LinearModelError(f"unknown class label {label!r}") from None


@dataclass(frozen=True, eq=False)
class ClassDistribution:
    classes: ClassSet
    probs: NDArray[np.float64]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (len(self.classes),):
            raise LinearModelError(
                f"distribution has {p.size} entries for {len(self.classes)} classes"
            )
        if not np.all(np.isfinite(p)) or np.any(p < -PROB_TOL) or np.any(p > 1 + PROB_TOL):
            raise LinearModelError("probabilities must lie in [0, 1]")
        if abs(float(p.sum()) - 1.0) > PROB_TOL:
            raise LinearModelError(f"probabilities sum to {p.sum()!r}, not 1")
        p = np.clip(p, 0.0, 1.0)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_mapping(cls, classes: ClassSet, probs: Mapping[str, float]) -> "ClassDistribution":
        if set(probs) != set(classes.labels):
            raise LinearModelError("distribution keys must be exactly the class set")
        return cls(classes, np.array([probs[c] for c in classes.labels], dtype=np.float64))

    def __getitem__(self, label: str) -> float:
        return float(self.probs[self.classes.index(label)])

    def as_dict(self) -> dict[str, float]:
        return {c: float(p) for c, p in zip(self.classes.labels, self.probs)}

    def argmax(self) -> str:
        # np.argmax renvoie le premier maximum: égalité -> ordre du ClassSet
        return self.classes.labels[int(np.argmax(self.probs))]


class TrainConfig(BaseModel):
    l2: float = Field(1e-3, ge=0.0)
    learning_rate: float = Field(0.5, gt=0.0)
    max_iters: int = Field(2000, ge=0)
    grad_tol: float = Field(1e-6, ge=0.0)


@dataclass(frozen=True, eq=False)
class LinearModel:
    classes: ClassSet
    weights: NDArray[np.float64]  # (|C|, n_features + 1), last column = bias
    feature_kind: FeatureKind
    vocab_hash: str

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != len(self.classes) or w.shape[1] < 1:
            raise LinearModelError(
                f"weight matrix shape {w.shape} inconsistent with {len(self.classes)} classes"
            )
        if not np.all(np.isfinite(w)):
            raise LinearModelError("weight matrix has non-finite entries")
        if self.feature_kind not in ("dense", "sparse"):
            raise LinearModelError(f"unknown feature kind {self.feature_kind!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n_features(self) -> int:
        return self.weights.shape[1] - 1

    @classmethod
    def zeros(
        cls, classes: ClassSet, n_features: int, feature_kind: FeatureKind, vocab_hash: str
    ) -> "LinearModel":
        return cls(classes, np.zeros((len(classes), n_features + 1)), feature_kind, vocab_hash)


# ---- Math helpers ----
def _as_dense(x: Features, n_features: int) -> NDArray[np.float64]:
    if isinstance(x, SparseVector):
        if x.dim != n_features:
            raise LinearModelError(f"feature dim {x.dim} != model dim {n_features}")
        return x.to_dense()
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != (n_features,):
        raise LinearModelError(f"feature shape {arr.shape} != ({n_features},)")
    return arr


def _design_matrix(xs: Sequence[Features], n_features: int) -> NDArray[np.float64]:
    X = np.ones((len(xs), n_features + 1), dtype=np.float64)
    for i, x in enumerate(xs):
        X[i, :n_features] = _as_dense(x, n_features)
    return X


def _log_softmax(scores: NDArray[np.float64]) -> NDArray[np.float64]:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _loss_grad(
    W: NDArray[np.float64], X: NDArray[np.float64], Y: NDArray[np.float64], l2: float
) -> tuple[float, NDArray[np.float64]]:
    n = X.shape[0]
    logp = _log_softmax(X @ W.T)
    P = np.exp(logp)
    W_nob = W.copy()
    W_nob[:, -1] = 0.0  # pas de régularisation sur le biais
    loss = -float(np.sum(Y * logp)) / n + 0.5 * l2 * float(np.sum(W_nob * W_nob))
    grad = (P - Y).T @ X / n + l2 * W_nob
    return loss, grad


def _loss_only(W, X, Y, l2) -> float:
    logp = _log_softmax(X @ W.T)
    reg = W[:, :-1]
    return -float(np.sum(Y * logp)) / X.shape[0] + 0.5 * l2 * float(np.sum(reg * reg))


def _prepare_batch(
    model: LinearModel, batch: Sequence[Example]
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    if len(batch) == 0:
        raise LinearModelError("batch is empty")
    X = _design_matrix([x for x, _ in batch], model.n_features)
    Y = np.zeros((len(batch), len(model.classes)), dtype=np.float64)
    for i, (_, label) in enumerate(batch):
        Y[i, model.classes.index(label)] = 1.0
    return X, Y


# ---- Public operations ----
def predict_proba(model: LinearModel, x: Features) -> ClassDistribution:
    xd = _as_dense(x, model.n_features)
    scores = model.weights[:, :-1] @ xd + model.weights[:, -1]
    scores = scores - scores.max()
    e = np.exp(scores)
    return ClassDistribution(model.classes, e / e.sum())


def loss_and_gradient(
    model: LinearModel, batch: Sequence[Example], l2: float
) -> tuple[float, NDArray[np.float64]]:
    """Mean cross-entropy + (l2/2)·||W without bias||², and its gradient."""
    X, Y = _prepare_batch(model, batch)
    return _loss_grad(model.weights, X, Y, l2)


def train(
    data: Sequence[Example],
    classes: ClassSet,
    config: Optional[TrainConfig] = None,
    *,
    n_features: Optional[int] = None,
    feature_kind: Optional[FeatureKind] = None,
    vocab_hash: str = "unversioned",
) -> LinearModel:
    config = config or TrainConfig()
    if not data:
        raise LinearModelError("no training data")

    first = data[0][0]
    if feature_kind is None:
        feature_kind = "sparse" if isinstance(first, SparseVector) else "dense"
    if n_features is None:
        if isinstance(first, SparseVector):
            n_features = first.dim
        else:
            n_features = int(np.asarray(first).shape[0])

    counts = {c: 0 for c in classes}
    for _, label in data:
        if label not in counts:
            raise LinearModelError(f"unknown class label {label!r}")
        counts[label] += 1
    empty = [c for c, k in counts.items() if k == 0]
    if empty:
        raise LinearModelError(f"classes without training examples: {', '.join(empty)}")

    model = LinearModel.zeros(classes, n_features, feature_kind, vocab_hash)
    X, Y = _prepare_batch(model, data)
    W = np.array(model.weights)
    lr = config.learning_rate

    loss, grad = _loss_grad(W, X, Y, config.l2)
    for it in range(1, config.max_iters + 1):
        if not math.isfinite(loss):
            raise LinearModelError(f"non-finite loss at iteration {it}")
        gnorm = float(np.max(np.abs(grad)))
        if gnorm < config.grad_tol:
            logger.info("converged after %d iterations (|grad|inf=%.3g)", it - 1, gnorm)
            break
        # pas refusé si la perte augmente: on divise le pas par 2
        while True:
            W_new = W - lr * grad
            new_loss = _loss_only(W_new, X, Y, config.l2)
            if math.isfinite(new_loss) and new_loss <= loss:
                break
            lr *= 0.5
            logger.debug("iteration %d: step rejected, learning rate -> %.3g", it, lr)
            if lr < 1e-12:
                logger.warning("learning rate underflow at iteration %d; stopping", it)
                return LinearModel(classes, W, feature_kind, vocab_hash)
        W = W_new
        loss, grad = _loss_grad(W, X, Y, config.l2)
        if it % 500 == 0:
            logger.debug("iteration %d: loss=%.6f lr=%.3g", it, loss, lr)
    else:
        if config.max_iters:
            logger.info("stopped at max_iters=%d (loss=%.6f)", config.max_iters, loss)

    if not math.isfinite(loss):
        raise LinearModelError("non-finite loss after training")
    return LinearModel(classes, W, feature_kind, vocab_hash)


# ---- Serialization ----
def save_model(model: LinearModel) -> bytes:
    payload = LinearModelFile(
        format_version=MODEL_FORMAT_VERSION,
        classes=list(model.classes.labels),
        n_features=model.n_features,
        feature_kind=model.feature_kind,
        vocab_hash=model.vocab_hash,
        weights=model.weights.tolist(),
    )
    return (payload.model_dump_json(indent=1) + "\n").encode("utf-8")


def load_model(data: bytes, expected_hash: Optional[str] = None) -> LinearModel:
    try:
        raw = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"corrupt model payload: {e}") from e
    if not isinstance(raw, dict):
        raise ModelFormatError("corrupt model payload: not an object")
    version = raw.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelVersionError(
            f"unsupported model format version {version!r} (expected {MODEL_FORMAT_VERSION})"
        )
    try:
        parsed = LinearModelFile.model_validate(raw)
        model = LinearModel(
            ClassSet(tuple(parsed.classes)),
            np.array(parsed.weights, dtype=np.float64),
            parsed.feature_kind,
            parsed.vocab_hash,
        )
    except (ValidationError, LinearModelError, ValueError) as e:
        raise ModelFormatError(f"corrupt model payload: {e}") from e
    if model.n_features != parsed.n_features:
        raise ModelFormatError(
            f"weight matrix has {model.n_features} features, header says {parsed.n_features}"
        )
    if expected_hash is not None and model.vocab_hash != expected_hash:
        raise VocabularyMismatchError(
            f"model was trained against {model.vocab_hash[:12]}..., "
            f"supplied vocabulary is {expected_hash[:12]}..."
        )
    return model
