"""Data engine and evaluation toolkit for understand-think-answer traces."""

__version__ = "0.1.0"

from .trace_model import (
    BoundingBox,
    Boxes,
    Capability,
    CaptionText,
    ImageRef,
    NoEvidence,
    ReasoningTrace,
    Text,
    TraceKind,
    UnderstandDirective,
    VisualCue,
    clip_box,
    validate_trace,
)
from .trace_grammar import DEFAULT_GRAMMAR, GrammarConfig, parse, render

__all__ = [
    "BoundingBox",
    "Boxes",
    "Capability",
    "CaptionText",
    "ImageRef",
    "NoEvidence",
    "ReasoningTrace",
    "Text",
    "TraceKind",
    "UnderstandDirective",
    "VisualCue",
    "clip_box",
    "validate_trace",
    "DEFAULT_GRAMMAR",
    "GrammarConfig",
    "parse",
    "render",
]
