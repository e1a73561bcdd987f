from typing import List, Literal

from pydantic import BaseModel, Field

MODEL_FORMAT = "visadesk-linear-model"
MODEL_FORMAT_VERSION = 1


class LinearModelFile(BaseModel):
    """On-disk layout of a trained linear head (UTF-8 JSON)."""

    format: Literal["visadesk-linear-model"] = MODEL_FORMAT
    format_version: int
    classes: List[str] = Field(min_length=2)
    n_features: int = Field(ge=0)
    feature_kind: Literal["dense", "sparse"]
    vocab_hash: str = Field(min_length=1)
    # |C| lignes de n_features + 1 colonnes (dernière colonne = biais)
    weights: List[List[float]]


class BundleInfo(BaseModel):
    """Metadata stored next to a trained image + text model pair."""

    format_version: int = 1
    classes: List[str]
    text_n_range: List[int]
    featurizer: str
    stopwords_hash: str
    config_hash: str
    train_documents: int
    train_pages: int
