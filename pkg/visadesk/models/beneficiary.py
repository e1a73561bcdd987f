from sqlalchemy import Column, Integer, String

from visadesk.database import Base


class Beneficiary(Base):
    __tablename__ = "beneficiaries"

    id = Column(Integer, primary_key=True, index=True)
    case_number = Column(String(64), unique=True, nullable=False, index=True)
    soc_code = Column(String(7), nullable=False)
    field_of_study = Column(String(255), nullable=False)
    degree = Column(String(255), nullable=False)
    institution = Column(String(255), nullable=False)
