"""Domain types shared by every other module.

All types are immutable value objects: once constructed they are safe to
share across threads. Construction validates the documented invariants and
raises :class:`ValidationError` on violation.

Turn indexing is 1-based everywhere. Character offsets in evidence spans
count Unicode code points (Python string indices), never bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class ValidationError(ValueError):
    """A value violates a domain invariant or a file fails schema checks."""


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValidationError(message)


@dataclass(frozen=True)
class Utterance:
    """One message of a multi-party conversation."""

    turn_index: int  # 1-based position in the conversation
    author_id: str
    text: str

    def __post_init__(self) -> None:
        _require(self.turn_index >= 1, f"turn_index must be >= 1, got {self.turn_index}")
        _require(bool(self.text.strip()), "utterance text is empty after whitespace trim")


@dataclass(frozen=True)
class Conversation:
    """An ordered multi-party thread with sparse document labels.

    ``wiki_links`` holds (doc_id, turn_index) pairs: the document linked from
    the conversation and the turn where the link appeared.
    """

    id: str
    category: str
    title: str
    utterances: tuple[Utterance, ...]
    wiki_links: tuple[tuple[str, int], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "utterances", tuple(self.utterances))
        object.__setattr__(self, "wiki_links", tuple(tuple(p) for p in self.wiki_links))
        _require(len(self.utterances) > 0, f"conversation {self.id!r} has no utterances")
        turns = [u.turn_index for u in self.utterances]
        _require(
            turns == list(range(1, len(turns) + 1)),
            f"conversation {self.id!r}: turn indices must be exactly 1..{len(turns)}, got {turns}",
        )
        m = len(self.utterances)
        for doc_id, turn in self.wiki_links:
            _require(
                1 <= turn <= m,
                f"conversation {self.id!r}: wiki link {doc_id!r} at turn {turn} outside [1, {m}]",
            )

    @property
    def length(self) -> int:
        return len(self.utterances)


@dataclass(frozen=True)
class Document:
    """A corpus article. ``first_sentence`` grounds LLM candidate retrieval."""

    doc_id: str
    title: str
    text: str
    first_sentence: str

    def __post_init__(self) -> None:
        _require(bool(self.title), f"document {self.doc_id!r} has an empty title")


@dataclass(frozen=True)
class Qrel:
    """Graded relevance of one document to one conversation, with timing.

    ``ideal_turn`` is the earliest turn at which the document becomes
    relevant; retrieval before it earns no gain, retrieval after it is
    penalized for delay.
    """

    conversation_id: str
    doc_id: str
    grade: int
    ideal_turn: int

    def __post_init__(self) -> None:
        _require(self.grade in (0, 1, 2), f"grade must be 0, 1 or 2, got {self.grade}")
        _require(self.ideal_turn >= 1, f"ideal_turn must be >= 1, got {self.ideal_turn}")


@dataclass(frozen=True)
class TurnRun:
    """A ranked result list emitted at one conversation turn.

    A turn with no TurnRun means the system waited. Scores must be
    non-increasing in rank order and doc_ids unique.
    """

    conversation_id: str
    turn_index: int
    ranked: tuple[tuple[str, float], ...]
    run_tag: str = "run"

    def __post_init__(self) -> None:
        object.__setattr__(self, "ranked", tuple((d, float(s)) for d, s in self.ranked))
        _require(self.turn_index >= 1, f"turn_index must be >= 1, got {self.turn_index}")
        seen: set[str] = set()
        prev = None
        for doc_id, score in self.ranked:
            _require(
                doc_id not in seen,
                f"run {self.run_tag!r} conv {self.conversation_id!r} turn {self.turn_index}: "
                f"duplicate doc {doc_id!r}",
            )
            seen.add(doc_id)
            if prev is not None:
                _require(
                    score <= prev,
                    f"run {self.run_tag!r} conv {self.conversation_id!r} turn {self.turn_index}: "
                    f"scores increase at doc {doc_id!r}",
                )
            prev = score

    @property
    def doc_ids(self) -> tuple[str, ...]:
        return tuple(d for d, _ in self.ranked)


@dataclass(frozen=True)
class EvidenceSpan:
    """A highlighted region of one utterance, in Unicode code point offsets."""

    turn_index: int
    char_start: int
    char_end: int

    def __post_init__(self) -> None:
        _require(self.turn_index >= 1, f"turn_index must be >= 1, got {self.turn_index}")
        _require(
            0 <= self.char_start < self.char_end,
            f"bad span ({self.char_start}, {self.char_end}): need 0 <= start < end",
        )


def summary_word_count(summary: str) -> int:
    return len(summary.split())


MIN_SUMMARY_WORDS = 6


@dataclass(frozen=True)
class Judgment:
    """One worker's relevance label for one (conversation, document) pair.

    Labels 1 and 2 require at least one evidence span. The summary must have
    at least :data:`MIN_SUMMARY_WORDS` whitespace-separated words. Span
    bounds are checked against the conversation by
    :meth:`validate_against`, since the text is not carried here.
    """

    worker_id: str
    conversation_id: str
    doc_id: str
    label: int
    evidence: tuple[EvidenceSpan, ...]
    summary: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "evidence", tuple(self.evidence))
        _require(self.label in (0, 1, 2), f"label must be 0, 1 or 2, got {self.label}")
        if self.label >= 1:
            _require(
                len(self.evidence) > 0,
                f"judgment ({self.conversation_id!r}, {self.doc_id!r}): "
                f"label {self.label} requires evidence",
            )
        _require(
            summary_word_count(self.summary) >= MIN_SUMMARY_WORDS,
            f"summary has {summary_word_count(self.summary)} words, "
            f"minimum is {MIN_SUMMARY_WORDS}",
        )

    def validate_against(self, conversation: Conversation) -> None:
        """Check every evidence span lies within the referenced utterance."""
        m = conversation.length
        for span in self.evidence:
            _require(
                span.turn_index <= m,
                f"evidence references turn {span.turn_index} of a {m}-turn conversation",
            )
            text = conversation.utterances[span.turn_index - 1].text
            _require(
                span.char_end <= len(text),
                f"evidence span ({span.char_start}, {span.char_end}) exceeds "
                f"turn {span.turn_index} text length {len(text)}",
            )
