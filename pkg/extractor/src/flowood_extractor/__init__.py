"""Offline feature/logit/head exporter for pretrained image classifiers."""

from .extract import (
    EXPECTED_FEATURE_DIM,
    ExtractionError,
    ExtractionJob,
    extract,
    extract_odin_scores,
)
from .verify import LayoutReport, verify_layout

__version__ = "0.1.0"

__all__ = [
    "EXPECTED_FEATURE_DIM",
    "ExtractionError",
    "ExtractionJob",
    "extract",
    "extract_odin_scores",
    "LayoutReport",
    "verify_layout",
]
