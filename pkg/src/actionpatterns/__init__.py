"""Common-sense action patterns from language models: prompting, scoring, ontology population."""
from .model import (
    ActionPattern,
    ExtractionKind,
    GroundTruthEntry,
    SpatialRelation,
    load_ground_truth,
    normalize_label,
    validate_pattern,
)

__version__ = "0.1.0"

__all__ = [
    "ActionPattern",
    "ExtractionKind",
    "GroundTruthEntry",
    "SpatialRelation",
    "load_ground_truth",
    "normalize_label",
    "validate_pattern",
]
