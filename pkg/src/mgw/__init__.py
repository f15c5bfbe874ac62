"""Marked Galton-Watson trees conditioned on their number of marks."""

from .laws import (
    AdmissibilityError,
    Classification,
    LawError,
    MarkedLaw,
    MarkFunction,
    OffspringLaw,
    binary_law,
    c_theta,
    classify,
    generating_values,
    load_law,
    tilt,
    tilted_mean,
)
from .trees import MarkedTree, RestrictedTree, TreeError

__version__ = "0.1.0"

__all__ = [
    "AdmissibilityError",
    "Classification",
    "LawError",
    "MarkFunction",
    "MarkedLaw",
    "MarkedTree",
    "OffspringLaw",
    "RestrictedTree",
    "TreeError",
    "binary_law",
    "c_theta",
    "classify",
    "generating_values",
    "load_law",
    "tilt",
    "tilted_mean",
]
