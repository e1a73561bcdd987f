from typing import List

from pydantic import BaseModel, Field, RootModel


class BankRecord(BaseModel):
    attack_id: str = Field(min_length=1, pattern=r"^[a-z0-9][a-z0-9-]*$")
    description: str = Field(min_length=1)
    sentence: str


class BankFile(RootModel[List[BankRecord]]):
    """Example bank on disk: a JSON array of BankRecord."""
