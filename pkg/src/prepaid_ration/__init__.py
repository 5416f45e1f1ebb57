"""Threshold-based energy rationing for prepaid electricity customers."""

__version__ = "0.1.0"
