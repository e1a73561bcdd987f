from typing import Dict, List, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from visadesk.schemas.drafting import RfeFields

MANIFEST_VERSION = 1

DEFAULT_ATTACK_MIX = {
    "specialty-occupation": 0.55,
    "beneficiary-qualifications": 0.15,
    "employer-employee": 0.15,
    "maintenance-of-status": 0.15,
}


# ---- Config ----
class ClassSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: str = Field(min_length=1)
    layout: Literal["approval", "receipt"]
    n_docs: int = Field(ge=1)


def _default_classes() -> List[ClassSpec]:
    return [
        ClassSpec(label="i797-approval", layout="approval", n_docs=100),
        ClassSpec(label="i797-receipt", layout="receipt", n_docs=100),
    ]


class CorpusConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = 42
    classes: List[ClassSpec] = Field(default_factory=_default_classes, min_length=1)
    n_rfes: int = Field(49, ge=0)
    attack_mix: Dict[str, float] = Field(default_factory=lambda: dict(DEFAULT_ATTACK_MIX))
    ocr_noise_rate: float = Field(0.15, ge=0.0, lt=1.0)
    secondary_attack_rate: float = Field(0.3, ge=0.0, le=1.0)
    planted_per_attack: int = Field(3, ge=1)
    max_pages: int = Field(2, ge=1)

    @field_validator("attack_mix")
    @classmethod
    def _mix_sums_to_one(cls, v: Dict[str, float]) -> Dict[str, float]:
        if not v:
            raise ValueError("attack_mix must name at least one attack")
        if any(p < 0 for p in v.values()):
            raise ValueError("attack_mix proportions must be >= 0")
        if abs(sum(v.values()) - 1.0) > 1e-9:
            raise ValueError(f"attack_mix proportions sum to {sum(v.values())}, expected 1")
        return v

    @model_validator(mode="after")
    def _unique_labels(self):
        labels = [c.label for c in self.classes]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate class labels: {labels}")
        return self


# ---- Manifest ----
class ManifestDocument(BaseModel):
    doc_id: str
    label: str
    path: str
    pages: List[str]
    clean_text: str
    degraded_text: str


class PlantedSentence(BaseModel):
    attack_id: str
    example_index: int = Field(ge=0)
    text: str


class ManifestRfe(BaseModel):
    rfe_id: str
    path: str
    planted_attacks: List[str]
    fields: RfeFields
    planted: List[PlantedSentence] = Field(default_factory=list)


class CorpusManifest(BaseModel):
    format_version: int = MANIFEST_VERSION
    seed: int
    config_hash: str
    classes: List[str]
    bank: str = "bank.json"
    beneficiaries: str = "beneficiaries.json"
    templates: str = "templates"
    documents: List[ManifestDocument]
    rfes: List[ManifestRfe]
