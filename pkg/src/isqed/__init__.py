"""Auditing model ecosystems for functional redundancy via peer-inexpressible residuals."""

__version__ = "0.1.0"
