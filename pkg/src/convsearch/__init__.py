"""Benchmark engine for proactive and reactive document retrieval over
multi-party conversations."""

__version__ = "0.1.0"

from .models import (
    Conversation,
    Document,
    EvidenceSpan,
    Judgment,
    Qrel,
    TurnRun,
    Utterance,
    ValidationError,
)

__all__ = [
    "Conversation",
    "Document",
    "EvidenceSpan",
    "Judgment",
    "Qrel",
    "TurnRun",
    "Utterance",
    "ValidationError",
    "__version__",
]
