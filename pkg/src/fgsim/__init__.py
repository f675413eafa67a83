"""Synthesis of calibrated fluorescence-surgery video noise and evaluation
of causal video denoisers against it."""

__version__ = "0.1.0"

from .errors import ValidationError

__all__ = ["ValidationError", "__version__"]
