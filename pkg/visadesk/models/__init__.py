from visadesk.models.beneficiary import Beneficiary

__all__ = ["Beneficiary"]
