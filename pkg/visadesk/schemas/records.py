from typing import Dict, List, Literal, Optional

from pydantic import BaseModel


class ClassifyRecord(BaseModel):
    """One line of the ``classify`` output stream (JSON Lines)."""

    doc_id: str
    path: Optional[str] = None
    mode: Literal["ensemble", "image-only", "text-only"]
    label: str
    fused: Dict[str, float]
    p_image: Optional[Dict[str, float]] = None
    p_text: Optional[Dict[str, float]] = None
    h_image: Optional[float] = None
    h_text: Optional[float] = None
    w_image: Optional[float] = None
    w_text: Optional[float] = None
    n_pages: int = 0
    moved_to: Optional[str] = None


class EvidenceOut(BaseModel):
    sentence_index: int
    example_index: int
    attack_id: str
    similarity: float


class AttackReportOut(BaseModel):
    rfe: Optional[str] = None
    threshold: float
    detected: List[str]
    evidence: List[EvidenceOut]


class SectionOut(BaseModel):
    template_id: str
    attack_id: str
    evidence: List[EvidenceOut]


class DraftManifestOut(BaseModel):
    """Sidecar written next to every draft text file."""

    rfe: Optional[str] = None
    status: Literal["complete", "incomplete"]
    missing_fields: List[str]
    case_number: Optional[str] = None
    detected: List[str]
    threshold: float
    today: Optional[str] = None  # YYYY-MM-DD, date used for {{today}}
    sections: List[SectionOut]
    notes: List[str] = []
