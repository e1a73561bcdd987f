"""visadesk: immigration document classification, RFE attack detection and response drafting."""

__version__ = "0.1.0"
