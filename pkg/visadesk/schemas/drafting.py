import re
from datetime import date
from typing import FrozenSet, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, RootModel, field_validator, model_validator

SOC_PATTERN = r"^\d{2}-\d{4}$"


class RfeFields(BaseModel):
    model_config = ConfigDict(frozen=True)

    case_number: Optional[str] = None
    employee_name: Optional[str] = None
    employer_name: Optional[str] = None
    attorney_name: Optional[str] = None
    rfe_date: Optional[date] = None
    response_due_date: Optional[date] = None

    @field_validator("case_number")
    @classmethod
    def _non_empty_case(cls, v: Optional[str]) -> Optional[str]:
        if v is not None and not v.strip():
            raise ValueError("case_number must not be blank")
        return v

    @model_validator(mode="after")
    def _due_after_notice(self):
        if self.rfe_date and self.response_due_date and self.response_due_date < self.rfe_date:
            raise ValueError("response_due_date precedes rfe_date")
        return self


class BeneficiaryRecord(BaseModel):
    model_config = ConfigDict(frozen=True, from_attributes=True)

    case_number: str = Field(min_length=1)
    soc_code: str = Field(pattern=SOC_PATTERN)
    field_of_study: str
    degree: str
    institution: str


class BeneficiaryFile(RootModel[List[BeneficiaryRecord]]):
    """Beneficiary store on disk: JSON array, one object per case number."""


# Espace de noms des placeholders: RfeFields ∪ BeneficiaryRecord ∪ {today}
FIELD_NAMESPACE: FrozenSet[str] = frozenset(
    set(RfeFields.model_fields) | set(BeneficiaryRecord.model_fields) | {"today"}
)


class TemplateEntry(BaseModel):
    """One entry of ``<library>/manifest.json``."""

    id: str = Field(min_length=1)
    applicable_attack: str = Field(min_length=1)
    soc_selector: Union[Literal["*"], List[str]] = "*"
    file: str = Field(min_length=1)

    @field_validator("soc_selector")
    @classmethod
    def _soc_codes(cls, v):
        if isinstance(v, list):
            bad = [c for c in v if not re.match(SOC_PATTERN, c)]
            if bad or not v:
                raise ValueError(f"invalid soc codes in selector: {bad or v}")
        return v


class TemplateManifest(BaseModel):
    templates: List[TemplateEntry]
