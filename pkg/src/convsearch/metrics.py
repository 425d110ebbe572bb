"""Ranking metrics: the proactive pDCG family plus the reactive suite.

Proactive evaluation scores a system that may present a ranked list at any
turn of a conversation. Per turn i, a shown document earns

    gain = grade * 1 / log2(2 + i - l)   if i >= l, else 0

where l is the document's ideal turn: showing it exactly on time keeps the
full grade (the log factor is 1), showing it late decays the grade
logarithmically, showing it early earns nothing. Documents already shown at
an earlier engaged turn are removed before scoring, the survivors are
re-ranked compactly, and the per-turn DCG values are averaged over the
number of engagements (turns with a non-empty emitted list).

The ideal counterpart retrieves, at every turn that is some relevant
document's ideal turn, exactly those documents sorted by grade, and is
normalized by its own engagement count. npdcg is the ratio of the two.

All logarithms are base 2. Reactive metrics (nDCG, MRR, MAP, Recall) treat
the single final-turn list as an ordinary ad-hoc ranking; nDCG gain is the
raw grade by default to stay consistent with the proactive gains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .models import Qrel, TurnRun, ValidationError

#: Returned by npdcg when no relevant document exists (ideal never engages);
#: such conversations are excluded from means.
UNDEFINED = None


def rel_gain(grade: int, turn_shown: int, ideal_turn: int) -> float:
    """Delay-penalized gain of showing a document at ``turn_shown``.

    Zero before the ideal turn; exactly ``grade`` at it; decayed by
    1/log2(2 + delay) after it.
    """
    if turn_shown < 1 or ideal_turn < 1:
        raise ValidationError("turns are 1-based")
    if turn_shown < ideal_turn:
        return 0.0
    return grade / math.log2(1 + turn_shown - (ideal_turn - 1))


def dcg(gains: Sequence[float], k: int) -> float:
    """Sum of gains discounted by log2(position + 1), cut off at k."""
    return sum(g / math.log2(j + 1) for j, g in enumerate(gains[:k], 1))


def _grade_and_ideal(
    qrels: Mapping[str, tuple[int, int]], doc_id: str
) -> tuple[int, int]:
    # missing pairs are unjudged: grade 0, timing irrelevant
    return qrels.get(doc_id, (0, 1))


def pdcg(
    lists_by_turn: Mapping[int, Sequence[str]],
    qrels: Mapping[str, tuple[int, int]],
    k: int,
    m: int | None = None,
) -> float:
    """Engagement-normalized proactive DCG for one conversation.

    ``lists_by_turn`` maps turn index to the emitted ranked doc ids; absent
    turns mean the system waited. ``qrels`` maps doc_id to (grade,
    ideal_turn). Every document emitted at an earlier engaged turn is
    removed from later lists before scoring (the emitted list, not the
    cutoff-truncated one, counts as shown). Engagements are turns whose
    emitted list is non-empty, even if deduplication leaves nothing to
    score. Returns 0 when the system never engages.
    """
    if k < 1:
        raise ValidationError(f"cutoff k must be >= 1, got {k}")
    engaged = [t for t in sorted(lists_by_turn) if lists_by_turn[t]]
    if m is not None:
        for t in engaged:
            if t > m:
                raise ValidationError(
                    f"result list at turn {t} of a {m}-turn conversation"
                )
    if not engaged:
        return 0.0
    seen: set[str] = set()
    total = 0.0
    for turn in engaged:
        emitted = list(lists_by_turn[turn])
        fresh = [d for d in emitted if d not in seen]
        gains = []
        for doc_id in fresh[:k]:
            grade, ideal = _grade_and_ideal(qrels, doc_id)
            gains.append(rel_gain(grade, turn, ideal) if grade > 0 else 0.0)
        total += dcg(gains, k)
        seen.update(emitted)
    return total / len(engaged)


def ipdcg(qrels: Mapping[str, tuple[int, int]], m: int, k: int) -> float:
    """pDCG of the ideal policy.

    The ideal model engages exactly at turns that are some relevant
    document's ideal turn, shows those documents sorted by grade descending
    (ties by doc_id), and is normalized by its own engagement count.
    Returns 0 when no relevant document exists.
    """
    if k < 1:
        raise ValidationError(f"cutoff k must be >= 1, got {k}")
    by_turn: dict[int, list[tuple[int, str]]] = {}
    for doc_id, (grade, ideal) in qrels.items():
        if grade >= 1 and 1 <= ideal <= m:
            by_turn.setdefault(ideal, []).append((grade, doc_id))
    if not by_turn:
        return 0.0
    total = 0.0
    for turn in sorted(by_turn):
        docs = sorted(by_turn[turn], key=lambda g: (-g[0], g[1]))
        gains = [float(grade) for grade, _ in docs]  # on time: no delay factor
        total += dcg(gains, k)
    return total / len(by_turn)


def npdcg(
    lists_by_turn: Mapping[int, Sequence[str]],
    qrels: Mapping[str, tuple[int, int]],
    m: int,
    k: int,
) -> float | None:
    """pdcg / ipdcg. ``UNDEFINED`` (None) when there is nothing relevant to
    find; 0.0 when the system never engages."""
    ideal = ipdcg(qrels, m, k)
    if ideal == 0.0:
        return UNDEFINED
    return pdcg(lists_by_turn, qrels, k, m=m) / ideal


# -- reactive metrics --


def ndcg(ranked: Sequence[str], qrels: Mapping[str, tuple[int, int]], k: int,
         exponential_gain: bool = False) -> float | None:
    """nDCG@k with graded gains, normalized by the sorted-grade ideal list.

    Gain is the raw grade unless ``exponential_gain`` switches to
    2**grade - 1. Undefined (None) when the conversation has no relevant
    document.
    """

    def gain(grade: int) -> float:
        return float(2**grade - 1) if exponential_gain else float(grade)

    gains = [gain(_grade_and_ideal(qrels, d)[0]) for d in ranked]
    ideal_gains = sorted((gain(g) for g, _ in qrels.values()), reverse=True)
    idcg = dcg(ideal_gains, k)
    if idcg == 0.0:
        return UNDEFINED
    return dcg(gains, k) / idcg


def reciprocal_rank(ranked: Sequence[str], relevant: set[str]) -> float:
    for position, doc_id in enumerate(ranked, 1):
        if doc_id in relevant:
            return 1.0 / position
    return 0.0


def average_precision(ranked: Sequence[str], relevant: set[str]) -> float:
    hits = 0
    total = 0.0
    for position, doc_id in enumerate(ranked, 1):
        if doc_id in relevant:
            hits += 1
            total += hits / position
    return total / len(relevant) if relevant else 0.0


def recall_at_k(ranked: Sequence[str], relevant: set[str], k: int) -> float:
    if not relevant:
        return 0.0
    return len(set(ranked[:k]) & relevant) / len(relevant)


@dataclass
class MetricReport:
    """Per-conversation and mean metric values.

    ``per_conversation`` maps metric name to {conversation_id: value}, where a
    None value marks an undefined measurement (no relevant documents); means
    are arithmetic over the defined values only.
    """

    cutoffs: tuple[int, ...]
    per_conversation: dict[str, dict[str, float | None]] = field(default_factory=dict)

    @property
    def metric_names(self) -> list[str]:
        return list(self.per_conversation)

    def mean(self, metric: str) -> float | None:
        values = [v for v in self.per_conversation[metric].values() if v is not None]
        if not values:
            return None
        return sum(values) / len(values)

    def means(self) -> dict[str, float | None]:
        return {name: self.mean(name) for name in self.per_conversation}

    def conversation_ids(self) -> list[str]:
        ids: set[str] = set()
        for values in self.per_conversation.values():
            ids.update(values)
        return sorted(ids)

    def to_dict(self) -> dict:
        return {
            "cutoffs": list(self.cutoffs),
            "means": self.means(),
            "per_conversation": {
                name: dict(sorted(values.items()))
                for name, values in self.per_conversation.items()
            },
        }


def qrels_by_conversation(qrels: Iterable[Qrel]) -> dict[str, dict[str, tuple[int, int]]]:
    """Group a qrels list into per-conversation {doc_id: (grade, ideal_turn)}."""
    grouped: dict[str, dict[str, tuple[int, int]]] = {}
    for q in qrels:
        per_conv = grouped.setdefault(q.conversation_id, {})
        if q.doc_id in per_conv:
            raise ValidationError(
                f"duplicate qrel for ({q.conversation_id!r}, {q.doc_id!r})"
            )
        per_conv[q.doc_id] = (q.grade, q.ideal_turn)
    return grouped


def runs_by_conversation(turn_runs: Iterable[TurnRun]) -> dict[str, dict[int, tuple[str, ...]]]:
    """Group TurnRuns into per-conversation {turn: doc ids}, rejecting
    duplicate turns."""
    grouped: dict[str, dict[int, tuple[str, ...]]] = {}
    for tr in turn_runs:
        per_conv = grouped.setdefault(tr.conversation_id, {})
        if tr.turn_index in per_conv:
            raise ValidationError(
                f"conv {tr.conversation_id!r}: two result lists at turn {tr.turn_index}"
            )
        per_conv[tr.turn_index] = tr.doc_ids
    return grouped


def evaluate_proactive(
    turn_runs: Iterable[TurnRun],
    qrels: Iterable[Qrel],
    cutoffs: Sequence[int],
    lengths: Mapping[str, int] | None = None,
) -> MetricReport:
    """npDCG@k over every judged conversation.

    Conversations present in the qrels but never engaged score 0; runs over
    conversations with no relevance data are undefined and excluded from the
    mean. Conversation length defaults to the largest turn seen in the run
    or qrels when ``lengths`` does not pin it.
    """
    grouped_runs = runs_by_conversation(turn_runs)
    grouped_qrels = qrels_by_conversation(qrels)
    conv_ids = sorted(set(grouped_runs) | set(grouped_qrels))
    report = MetricReport(cutoffs=tuple(cutoffs))
    for k in cutoffs:
        column: dict[str, float | None] = {}
        for conv_id in conv_ids:
            lists = grouped_runs.get(conv_id, {})
            conv_qrels = grouped_qrels.get(conv_id, {})
            m = _conversation_length(conv_id, lists, conv_qrels, lengths)
            column[conv_id] = npdcg(lists, conv_qrels, m, k)
        report.per_conversation[f"npdcg@{k}"] = column
    return report


def _conversation_length(
    conv_id: str,
    lists: Mapping[int, Sequence[str]],
    conv_qrels: Mapping[str, tuple[int, int]],
    lengths: Mapping[str, int] | None,
) -> int:
    if lengths is not None and conv_id in lengths:
        return lengths[conv_id]
    turns = list(lists) + [ideal for _, ideal in conv_qrels.values()]
    return max(turns) if turns else 1


def evaluate_reactive(
    turn_runs: Iterable[TurnRun],
    qrels: Iterable[Qrel],
    cutoffs: Sequence[int],
    relevance_threshold: int = 1,
    exponential_gain: bool = False,
) -> MetricReport:
    """nDCG@k, MRR, MAP and Recall@k over single final-turn rankings.

    MRR, MAP and Recall binarize relevance at grade >= ``relevance_threshold``.
    A conversation with no relevant document is undefined on every metric and
    excluded from means; a judged conversation missing from the run scores 0.
    """
    grouped_qrels = qrels_by_conversation(qrels)
    rankings: dict[str, tuple[str, ...]] = {}
    for tr in turn_runs:
        if tr.conversation_id in rankings:
            raise ValidationError(
                f"reactive run has several result lists for conv {tr.conversation_id!r}"
            )
        rankings[tr.conversation_id] = tr.doc_ids

    conv_ids = sorted(set(rankings) | set(grouped_qrels))
    report = MetricReport(cutoffs=tuple(cutoffs))
    columns: dict[str, dict[str, float | None]] = {f"ndcg@{k}": {} for k in cutoffs}
    columns["mrr"] = {}
    columns["map"] = {}
    for k in cutoffs:
        columns[f"recall@{k}"] = {}

    for conv_id in conv_ids:
        ranked = rankings.get(conv_id, ())
        conv_qrels = grouped_qrels.get(conv_id, {})
        relevant = {
            d for d, (g, _) in conv_qrels.items() if g >= relevance_threshold
        }
        defined = bool(relevant)
        for k in cutoffs:
            columns[f"ndcg@{k}"][conv_id] = (
                ndcg(ranked, conv_qrels, k, exponential_gain) if defined else UNDEFINED
            )
            columns[f"recall@{k}"][conv_id] = (
                recall_at_k(ranked, relevant, k) if defined else UNDEFINED
            )
        columns["mrr"][conv_id] = reciprocal_rank(ranked, relevant) if defined else UNDEFINED
        columns["map"][conv_id] = average_precision(ranked, relevant) if defined else UNDEFINED

    report.per_conversation = columns
    return report
