"""Symmetric boundary-element EEG forward solver with a Calderón-type preconditioner."""

__version__ = "0.1.0"
