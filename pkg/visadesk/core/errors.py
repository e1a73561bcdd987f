# visadesk/core/errors.py
"""Exception hierarchy for visadesk.

Services raise these; only the CLI turns them into exit codes.
"""
from __future__ import annotations

from typing import Iterable


class VisadeskError(Exception):
    """Base class for every failure visadesk reports on purpose."""


# ---- Text & vectors ----
class VectorSpaceError(VisadeskError, ValueError):
    pass


# ---- Images ----
class PgmFormatError(VisadeskError, ValueError):
    """Malformed, truncated or unsupported PGM payload."""


# ---- Linear models ----
class LinearModelError(VisadeskError, ValueError):
    pass


class ModelFormatError(VisadeskError, ValueError):
    """Model file cannot be decoded."""


class ModelVersionError(ModelFormatError):
    pass


class VocabularyMismatchError(ModelFormatError):
    """Model was trained against another vocabulary / featurizer."""


# ---- Ensemble ----
class EnsembleError(VisadeskError, ValueError):
    pass


# ---- Attack detection ----
class BankError(VisadeskError, ValueError):
    pass


class AttackDetectionError(VisadeskError, ValueError):
    pass


# ---- Drafting ----
class BeneficiaryStoreError(VisadeskError, ValueError):
    pass


class BeneficiaryNotFoundError(VisadeskError, LookupError):
    def __init__(self, case_number: str):
        super().__init__(f"no beneficiary record for case number {case_number!r}")
        self.case_number = case_number


class TemplateLibraryError(VisadeskError, ValueError):
    pass


class TemplateSelectionError(VisadeskError, LookupError):
    def __init__(self, attack_id: str, soc_code: str | None = None):
        msg = f"no response template applies to attack {attack_id!r}"
        if soc_code:
            msg += f" (soc code {soc_code})"
        super().__init__(msg)
        self.attack_id = attack_id
        self.soc_code = soc_code


class MissingPlaceholderError(VisadeskError, KeyError):
    def __init__(self, template_id: str, missing: Iterable[str]):
        self.template_id = template_id
        self.missing = tuple(sorted(set(missing)))
        super().__init__(
            f"template {template_id!r} has unresolved placeholders: "
            + ", ".join(self.missing)
        )

    def __str__(self) -> str:  # KeyError met des guillemets autour du message
        return self.args[0]


class DraftAssemblyError(VisadeskError, ValueError):
    pass


# ---- Corpus & evaluation ----
class CorpusError(VisadeskError, ValueError):
    pass


class EvaluationError(VisadeskError, ValueError):
    pass
