"""Judgment pools, label aggregation, agreement, and qrels export.

Pools are built depth-k style: per conversation, the union of each run's
top-k final-turn documents. Collected judgments aggregate by majority vote
with one special rule: a three-way split between relevant, partially
relevant and irrelevant resolves to relevant. Ideal positions come from the
earliest evidence highlight across workers.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .models import (
    Conversation,
    EvidenceSpan,
    Judgment,
    Qrel,
    TurnRun,
    ValidationError,
)

DEFAULT_REPLICATION = 3


@dataclass(frozen=True)
class PoolEntry:
    conversation_id: str
    doc_ids: tuple[str, ...]
    source_runs: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "doc_ids", tuple(self.doc_ids))
        object.__setattr__(self, "source_runs", tuple(self.source_runs))
        if len(set(self.doc_ids)) != len(self.doc_ids):
            raise ValidationError(
                f"pool for {self.conversation_id!r} contains duplicate doc ids"
            )


def final_turn_ranking(turn_runs: Sequence[TurnRun]) -> dict[str, tuple[str, ...]]:
    """Per conversation, the ranked doc ids of the latest turn in the run."""
    latest: dict[str, TurnRun] = {}
    for tr in turn_runs:
        current = latest.get(tr.conversation_id)
        if current is None or tr.turn_index > current.turn_index:
            latest[tr.conversation_id] = tr
    return {conv_id: tr.doc_ids for conv_id, tr in latest.items()}


def build_pools(
    runs: Sequence[Sequence[TurnRun]],
    depth: int,
    run_tags: Sequence[str] | None = None,
) -> list[PoolEntry]:
    """Union of each run's top-``depth`` documents, per conversation.

    Pool order is first-seen across runs, runs visited in the order given,
    so the pool is reproducible for a fixed run order.
    """
    if depth < 1:
        raise ValidationError(f"pool depth must be >= 1, got {depth}")
    if run_tags is None:
        run_tags = []
        for i, run in enumerate(runs):
            tags = {tr.run_tag for tr in run}
            run_tags.append(sorted(tags)[0] if tags else f"run{i}")
    rankings = [final_turn_ranking(run) for run in runs]
    conv_ids: list[str] = []
    seen_convs: set[str] = set()
    for ranking in rankings:
        for conv_id in ranking:
            if conv_id not in seen_convs:
                seen_convs.add(conv_id)
                conv_ids.append(conv_id)

    pools: list[PoolEntry] = []
    for conv_id in sorted(conv_ids):
        pooled: list[str] = []
        seen: set[str] = set()
        sources: list[str] = []
        for tag, ranking in zip(run_tags, rankings):
            top = ranking.get(conv_id, ())[:depth]
            if top:
                sources.append(tag)
            for doc_id in top:
                if doc_id not in seen:
                    seen.add(doc_id)
                    pooled.append(doc_id)
        pools.append(
            PoolEntry(
                conversation_id=conv_id,
                doc_ids=tuple(pooled),
                source_runs=tuple(sources),
            )
        )
    return pools


def write_pools(pools: Iterable[PoolEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for pool in pools:
            f.write(
                json.dumps(
                    {
                        "conversation_id": pool.conversation_id,
                        "doc_ids": list(pool.doc_ids),
                        "source_runs": list(pool.source_runs),
                    }
                )
                + "\n"
            )


def read_pools(path: str | Path) -> list[PoolEntry]:
    pools = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            obj = json.loads(line)
            pools.append(
                PoolEntry(
                    conversation_id=obj["conversation_id"],
                    doc_ids=tuple(obj["doc_ids"]),
                    source_runs=tuple(obj.get("source_runs", [])),
                )
            )
    return pools


# -- label aggregation --


def aggregate_labels(labels: Sequence[int], required: int = DEFAULT_REPLICATION) -> int | None:
    """Final grade from one pair's worker labels; None while incomplete.

    Strict majority wins. With no majority the tied top labels resolve to
    the highest grade, which for three raters is exactly the
    relevant/partial/irrelevant split resolving to relevant.
    """
    if len(labels) < required:
        return None
    for label in labels:
        if label not in (0, 1, 2):
            raise ValidationError(f"label must be 0, 1 or 2, got {label}")
    counts = Counter(labels)
    top = counts.most_common()
    best_count = top[0][1]
    tied = [label for label, count in top if count == best_count]
    return max(tied)


# -- agreement --


def fleiss_kappa(matrix: Sequence[Sequence[int]]) -> float | None:
    """Fleiss' kappa over an items x categories count matrix.

    Every item needs the same number of ratings. Returns None when expected
    agreement is 1 (a single category everywhere), where kappa is undefined.
    """
    rows = [list(row) for row in matrix]
    if not rows:
        raise ValidationError("kappa needs at least one item")
    raters = sum(rows[0])
    if raters < 2:
        raise ValidationError("kappa needs at least two ratings per item")
    for row in rows:
        if sum(row) != raters:
            raise ValidationError("every item must have the same number of ratings")

    n_items = len(rows)
    p_observed = sum(
        (sum(c * c for c in row) - raters) / (raters * (raters - 1)) for row in rows
    ) / n_items
    totals = [sum(row[j] for row in rows) for j in range(len(rows[0]))]
    grand = n_items * raters
    p_expected = sum((t / grand) ** 2 for t in totals)
    if abs(1.0 - p_expected) < 1e-12:
        return None
    return (p_observed - p_expected) / (1.0 - p_expected)


def judgments_to_matrix(
    judgments_by_pair: dict[tuple[str, str], Sequence[Judgment]],
    categories: int = 3,
) -> list[list[int]]:
    matrix = []
    for pair in sorted(judgments_by_pair):
        row = [0] * categories
        for j in judgments_by_pair[pair]:
            row[j.label] += 1
        matrix.append(row)
    return matrix


# -- ideal positions and export --


@dataclass(frozen=True)
class ExportWarning:
    conversation_id: str
    doc_id: str
    message: str


def ideal_position(judgments: Sequence[Judgment]) -> tuple[int, bool]:
    """Earliest evidence turn across workers who judged the pair relevant.

    Returns (turn, defaulted): when nobody left evidence the position
    defaults to turn 1 and the flag is set so exports can warn.
    """
    turns = [
        span.turn_index
        for j in judgments
        if j.label >= 1
        for span in j.evidence
    ]
    if not turns:
        return 1, True
    return min(turns), False


def group_judgments(
    judgments: Iterable[Judgment],
) -> dict[tuple[str, str], list[Judgment]]:
    grouped: dict[tuple[str, str], list[Judgment]] = {}
    for j in judgments:
        grouped.setdefault((j.conversation_id, j.doc_id), []).append(j)
    return grouped


def export_qrels(
    judgments: Iterable[Judgment],
    required: int = DEFAULT_REPLICATION,
) -> tuple[list[Qrel], list[ExportWarning], list[tuple[str, str]]]:
    """Aggregate a judgment log into qrels.

    Returns (qrels sorted by conversation and doc for reproducible output,
    warnings, incomplete pairs that were excluded). Aggregation ignores
    worker order, so any log ordering yields identical qrels.
    """
    grouped = group_judgments(judgments)
    qrels: list[Qrel] = []
    warnings: list[ExportWarning] = []
    incomplete: list[tuple[str, str]] = []
    for (conv_id, doc_id), pair_judgments in sorted(grouped.items()):
        grade = aggregate_labels([j.label for j in pair_judgments], required)
        if grade is None:
            incomplete.append((conv_id, doc_id))
            continue
        if grade >= 1:
            turn, defaulted = ideal_position(pair_judgments)
            if defaulted:
                warnings.append(
                    ExportWarning(
                        conv_id,
                        doc_id,
                        "relevant pair has no evidence; ideal turn defaulted to 1",
                    )
                )
        else:
            turn = 1
        qrels.append(Qrel(conv_id, doc_id, grade, turn))
    return qrels, warnings, incomplete


# -- evidence span snapping --

_SENTENCE_BOUNDARY_RE = re.compile(r"[.!?]+(?:\s+|$)")


def sentence_spans(text: str) -> list[tuple[int, int]]:
    """(start, end) code point offsets of each sentence in the text."""
    spans = []
    start = 0
    for match in _SENTENCE_BOUNDARY_RE.finditer(text):
        end = match.end()
        if text[start:end].strip():
            spans.append((start, end))
        start = end
    if start < len(text) and text[start:].strip():
        spans.append((start, len(text)))
    return spans


def snap_span_to_sentences(
    conversation: Conversation, span: EvidenceSpan
) -> EvidenceSpan:
    """Widen a highlight outward to the sentence boundaries it touches.

    Workers highlight sentences; free-hand selections are normalized so the
    stored evidence is always whole sentences.
    """
    text = conversation.utterances[span.turn_index - 1].text
    boundaries = sentence_spans(text)
    start, end = span.char_start, span.char_end
    for s, e in boundaries:
        if s <= span.char_start < e:
            start = s
        if s < span.char_end <= e:
            end = e
    return EvidenceSpan(span.turn_index, start, end)
