"""Runs retrieval systems over conversations, reactively or proactively.

Reactive mode issues one query per conversation (title plus every
utterance). Proactive mode streams turns through a decision policy: at each
turn the policy sees only the history and the current utterance, and a
positive decision triggers retrieval over the prefix up to and including
that turn. Deduplication across turns is the metric's job, not the
harness's.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from random import Random
from typing import Iterable, Mapping, Protocol, Sequence

from .index import InvertedIndex, tokenize
from .models import Conversation, Qrel, TurnRun, Utterance, ValidationError


class Retriever(Protocol):
    def retrieve(self, context: str, k: int) -> list[tuple[str, float]]: ...


@dataclass(frozen=True)
class TurnView:
    """What a decision policy is allowed to see at turn i: the conversation
    identity, turns 1..i-1, and the current turn. Never the future."""

    conversation_id: str
    history: tuple[Utterance, ...]
    current: Utterance

    @property
    def turn_index(self) -> int:
        return self.current.turn_index


class DecisionPolicy(Protocol):
    def decide(self, view: TurnView) -> bool: ...


class BM25Retriever:
    def __init__(self, index: InvertedIndex):
        self.index = index

    def retrieve(self, context: str, k: int) -> list[tuple[str, float]]:
        return self.index.search(context, k)


def build_context(title: str, utterances: Sequence[Utterance]) -> str:
    """Title plus utterance texts joined by newline turn separators."""
    return "\n".join([title] + [u.text for u in utterances])


def run_reactive(
    retriever: Retriever,
    conversations: Iterable[Conversation],
    k: int,
    run_tag: str = "reactive",
) -> list[TurnRun]:
    """One final-turn result list per conversation, whole thread as query."""
    if k < 1:
        raise ValidationError(f"cutoff k must be >= 1, got {k}")
    runs: list[TurnRun] = []
    for conv in conversations:
        ranked = retriever.retrieve(build_context(conv.title, conv.utterances), k)
        if ranked:
            runs.append(
                TurnRun(
                    conversation_id=conv.id,
                    turn_index=conv.length,
                    ranked=tuple(ranked),
                    run_tag=run_tag,
                )
            )
    return runs


def run_proactive(
    policy: DecisionPolicy,
    retriever: Retriever,
    conversations: Iterable[Conversation],
    k: int,
    run_tag: str = "proactive",
) -> list[TurnRun]:
    """Stream each conversation turn by turn, retrieving when the policy
    says so. Emits nothing for turns where the policy waits or retrieval
    comes back empty."""
    if k < 1:
        raise ValidationError(f"cutoff k must be >= 1, got {k}")
    runs: list[TurnRun] = []
    for conv in conversations:
        for i, utterance in enumerate(conv.utterances, 1):
            view = TurnView(
                conversation_id=conv.id,
                history=conv.utterances[: i - 1],
                current=utterance,
            )
            if not policy.decide(view):
                continue
            context = build_context(conv.title, conv.utterances[:i])
            ranked = retriever.retrieve(context, k)
            if ranked:
                runs.append(
                    TurnRun(
                        conversation_id=conv.id,
                        turn_index=i,
                        ranked=tuple(ranked),
                        run_tag=run_tag,
                    )
                )
    return runs


# -- baseline decision policies --


class AlwaysPolicy:
    def decide(self, view: TurnView) -> bool:
        return True


class NeverPolicy:
    def decide(self, view: TurnView) -> bool:
        return False


class ThresholdPolicy:
    """Engage when an externally computed per-turn score exceeds tau.

    Scores come from a sidecar TSV (conv_id, turn, score), typically the
    output of a trained engagement classifier. Missing entries never engage.
    """

    def __init__(self, scores: Mapping[tuple[str, int], float], tau: float):
        self.scores = dict(scores)
        self.tau = tau

    def decide(self, view: TurnView) -> bool:
        score = self.scores.get((view.conversation_id, view.turn_index))
        if score is None:
            return False
        return score > self.tau


class LexicalPolicy:
    """Engage when the current utterance retrieves strongly on its own:
    top-1 BM25 score normalized by query token count, compared to tau.
    Utterances with no index hits never engage."""

    def __init__(self, index: InvertedIndex, tau: float):
        self.index = index
        self.tau = tau

    def decide(self, view: TurnView) -> bool:
        hits = self.index.search(view.current.text, 1)
        if not hits:
            return False
        tokens = tokenize(view.current.text)
        score = hits[0][1] / max(1, len(tokens))
        return score > self.tau


def read_scores(path: str | Path) -> dict[tuple[str, int], float]:
    """Parse a scores.tsv sidecar: conv_id<TAB>turn<TAB>score."""
    scores: dict[tuple[str, int], float] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValidationError(
                    f"{path}:{line_number}: expected 3 tab-separated fields"
                )
            try:
                key = (parts[0], int(parts[1]))
                scores[key] = float(parts[2])
            except ValueError as exc:
                raise ValidationError(f"{path}:{line_number}: {exc}") from exc
    return scores


def baseline_policies(
    scores: Mapping[tuple[str, int], float] | None = None,
    tau: float = 0.5,
    index: InvertedIndex | None = None,
) -> dict[str, DecisionPolicy]:
    policies: dict[str, DecisionPolicy] = {
        "always": AlwaysPolicy(),
        "never": NeverPolicy(),
    }
    if scores is not None:
        policies["threshold"] = ThresholdPolicy(scores, tau)
    if index is not None:
        policies["lexical"] = LexicalPolicy(index, tau)
    return policies


# -- engagement classifier training data --


@dataclass(frozen=True)
class PolicyExample:
    conversation_id: str
    turn_index: int
    text: str
    label: int  # 1 = retrieval was warranted at this turn


def make_policy_training_pairs(
    conversations: Iterable[Conversation],
    qrels: Iterable[Qrel],
    seed: int = 13,
) -> list[PolicyExample]:
    """Balanced (utterance, label) pairs for training an engagement model.

    A turn is positive when some relevant document has its ideal position
    there. Each positive is paired with one negative utterance sampled
    uniformly (without replacement) from the rest of the split.
    """
    positive_turns: dict[str, set[int]] = {}
    for q in qrels:
        if q.grade >= 1:
            positive_turns.setdefault(q.conversation_id, set()).add(q.ideal_turn)

    positives: list[PolicyExample] = []
    negatives_pool: list[PolicyExample] = []
    for conv in conversations:
        marked = positive_turns.get(conv.id, set())
        for u in conv.utterances:
            example = PolicyExample(conv.id, u.turn_index, u.text, 0)
            if u.turn_index in marked:
                positives.append(
                    PolicyExample(conv.id, u.turn_index, u.text, 1)
                )
            else:
                negatives_pool.append(example)

    if len(negatives_pool) < len(positives):
        raise ValidationError(
            f"insufficient negatives: {len(positives)} positives but only "
            f"{len(negatives_pool)} unlabeled utterances"
        )
    rng = Random(seed)
    sampled = rng.sample(negatives_pool, len(positives))
    pairs: list[PolicyExample] = []
    for pos, neg in zip(positives, sampled):
        pairs.append(pos)
        pairs.append(neg)
    return pairs


# -- significance testing --


def paired_permutation_test(
    metric_a: Sequence[float],
    metric_b: Sequence[float],
    iterations: int = 10000,
    seed: int = 13,
) -> float:
    """Two-sided sign-flip permutation test over per-conversation deltas.

    Enumerates all sign assignments when there are at most 2**20 of them and
    fewer than ``iterations``; otherwise Monte Carlo samples with add-one
    smoothing. Deterministic under the seed.
    """
    if len(metric_a) != len(metric_b):
        raise ValidationError("paired test needs equal-length metric vectors")
    if not metric_a:
        raise ValidationError("paired test needs at least one conversation")
    deltas = [a - b for a, b in zip(metric_a, metric_b)]
    n = len(deltas)
    observed = abs(sum(deltas) / n)
    tolerance = 1e-12

    if n <= 20 and 2**n <= iterations:
        extreme = 0
        for mask in range(2**n):
            total = 0.0
            for i, d in enumerate(deltas):
                total += d if mask & (1 << i) else -d
            if abs(total / n) >= observed - tolerance:
                extreme += 1
        return extreme / 2**n

    rng = Random(seed)
    extreme = 0
    for _ in range(iterations):
        total = 0.0
        for d in deltas:
            total += d if rng.random() < 0.5 else -d
        if abs(total / n) >= observed - tolerance:
            extreme += 1
    return (extreme + 1) / (iterations + 1)
