"""Line-delimited file formats: conversations, corpus, qrels, runs.

Conversations and documents are one JSON object per line so corpora stream
without whole-file parsing. Qrels and runs are tab-separated text, one row
per (pair | ranked doc), with a turn column added to the conventional
layout:

    qrels.tsv  conv_id<TAB>doc_id<TAB>grade<TAB>ideal_turn
    run.tsv    conv_id<TAB>turn<TAB>rank<TAB>doc_id<TAB>score<TAB>tag

Every writer/reader pair is a lossless round trip for valid values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, TextIO

from .models import Conversation, Document, Qrel, TurnRun, Utterance, ValidationError


@dataclass(frozen=True)
class LineError:
    """A malformed line encountered while streaming a file."""

    line_number: int
    message: str


# -- conversations.jsonl --


def conversation_to_dict(conv: Conversation) -> dict:
    return {
        "id": conv.id,
        "category": conv.category,
        "title": conv.title,
        "utterances": [
            {"turn": u.turn_index, "author": u.author_id, "text": u.text}
            for u in conv.utterances
        ],
        "wiki_links": [{"doc_id": d, "turn": t} for d, t in conv.wiki_links],
    }


def conversation_from_dict(obj: dict) -> Conversation:
    try:
        utterances = tuple(
            Utterance(turn_index=u["turn"], author_id=u["author"], text=u["text"])
            for u in obj["utterances"]
        )
        wiki_links = tuple(
            (link["doc_id"], link["turn"]) for link in obj.get("wiki_links", [])
        )
        return Conversation(
            id=obj["id"],
            category=obj.get("category", ""),
            title=obj.get("title", ""),
            utterances=utterances,
            wiki_links=wiki_links,
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"conversation record missing field: {exc}") from exc


def read_conversations(
    path: str | Path, errors: list[LineError] | None = None
) -> Iterator[Conversation]:
    """Stream conversations in file order.

    Malformed lines are reported through ``errors`` (when given) with their
    1-based line numbers; the stream continues past them. An unreadable file
    raises OSError immediately.
    """
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                yield conversation_from_dict(obj)
            except (json.JSONDecodeError, ValidationError) as exc:
                if errors is not None:
                    errors.append(LineError(line_number, str(exc)))


def write_conversations(conversations: Iterable[Conversation], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for conv in conversations:
            f.write(json.dumps(conversation_to_dict(conv), ensure_ascii=False) + "\n")


# -- corpus.jsonl --


def document_to_dict(doc: Document) -> dict:
    return {
        "doc_id": doc.doc_id,
        "title": doc.title,
        "text": doc.text,
        "first_sentence": doc.first_sentence,
    }


def document_from_dict(obj: dict) -> Document:
    try:
        return Document(
            doc_id=obj["doc_id"],
            title=obj["title"],
            text=obj.get("text", ""),
            first_sentence=obj.get("first_sentence", ""),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"document record missing field: {exc}") from exc


def read_corpus(
    path: str | Path, errors: list[LineError] | None = None
) -> Iterator[Document]:
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield document_from_dict(json.loads(line))
            except (json.JSONDecodeError, ValidationError) as exc:
                if errors is not None:
                    errors.append(LineError(line_number, str(exc)))


def write_corpus(documents: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for doc in documents:
            f.write(json.dumps(document_to_dict(doc), ensure_ascii=False) + "\n")


# -- qrels.tsv --


def read_qrels(path: str | Path) -> list[Qrel]:
    """Read qrels in file order. Duplicate (conversation, doc) pairs and
    grades outside {0, 1, 2} are validation errors naming the line."""
    qrels: list[Qrel] = []
    seen: set[tuple[str, str]] = set()
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValidationError(
                    f"{path}:{line_number}: expected 4 tab-separated fields, got {len(parts)}"
                )
            conv_id, doc_id, grade_s, turn_s = parts
            try:
                grade, ideal_turn = int(grade_s), int(turn_s)
            except ValueError as exc:
                raise ValidationError(f"{path}:{line_number}: {exc}") from exc
            key = (conv_id, doc_id)
            if key in seen:
                raise ValidationError(
                    f"{path}:{line_number}: duplicate qrel for ({conv_id!r}, {doc_id!r})"
                )
            seen.add(key)
            try:
                qrels.append(Qrel(conv_id, doc_id, grade, ideal_turn))
            except ValidationError as exc:
                raise ValidationError(f"{path}:{line_number}: {exc}") from exc
    return qrels


def write_qrels(qrels: Iterable[Qrel], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        seen: set[tuple[str, str]] = set()
        for q in qrels:
            key = (q.conversation_id, q.doc_id)
            if key in seen:
                raise ValidationError(f"duplicate qrel for {key!r}")
            seen.add(key)
            f.write(f"{q.conversation_id}\t{q.doc_id}\t{q.grade}\t{q.ideal_turn}\n")


# -- run.tsv --


def _format_score(score: float) -> str:
    # repr keeps full float precision so read(write(x)) is exact
    return repr(float(score))


def write_run(turn_runs: Iterable[TurnRun], path_or_file: str | Path | TextIO) -> None:
    """Serialize runs with 1-based ascending ranks, grouped per turn."""

    def _emit(f: TextIO) -> None:
        for tr in turn_runs:
            if not tr.ranked:
                raise ValidationError(
                    f"run {tr.run_tag!r} conv {tr.conversation_id!r} turn {tr.turn_index}: "
                    "empty result list cannot be serialized (omit the turn instead)"
                )
            for rank, (doc_id, score) in enumerate(tr.ranked, 1):
                f.write(
                    f"{tr.conversation_id}\t{tr.turn_index}\t{rank}\t{doc_id}\t"
                    f"{_format_score(score)}\t{tr.run_tag}\n"
                )

    if hasattr(path_or_file, "write"):
        _emit(path_or_file)  # type: ignore[arg-type]
    else:
        with open(path_or_file, "w", encoding="utf-8") as f:
            _emit(f)


def read_run(path: str | Path) -> list[TurnRun]:
    """Read a run file into TurnRuns, in first-appearance order.

    Rank gaps, duplicate docs within a turn, and increasing scores are
    validation errors naming the offending line.
    """
    order: list[tuple[str, int]] = []
    rows: dict[tuple[str, int], list[tuple[int, str, float, str, int]]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise ValidationError(
                    f"{path}:{line_number}: expected 6 tab-separated fields, got {len(parts)}"
                )
            conv_id, turn_s, rank_s, doc_id, score_s, tag = parts
            try:
                turn, rank, score = int(turn_s), int(rank_s), float(score_s)
            except ValueError as exc:
                raise ValidationError(f"{path}:{line_number}: {exc}") from exc
            key = (conv_id, turn)
            if key not in rows:
                rows[key] = []
                order.append(key)
            rows[key].append((rank, doc_id, score, tag, line_number))

    runs: list[TurnRun] = []
    for key in order:
        conv_id, turn = key
        group = sorted(rows[key], key=lambda r: r[0])
        tags = {tag for _, _, _, tag, _ in group}
        if len(tags) != 1:
            raise ValidationError(
                f"{path}: conv {conv_id!r} turn {turn}: mixed run tags {sorted(tags)}"
            )
        for position, (rank, _, _, _, line_number) in enumerate(group, 1):
            if rank != position:
                raise ValidationError(
                    f"{path}:{line_number}: conv {conv_id!r} turn {turn}: "
                    f"expected rank {position}, got {rank}"
                )
        first_line = group[0][4]
        try:
            runs.append(
                TurnRun(
                    conversation_id=conv_id,
                    turn_index=turn,
                    ranked=tuple((doc_id, score) for _, doc_id, score, _, _ in group),
                    run_tag=next(iter(tags)),
                )
            )
        except ValidationError as exc:
            raise ValidationError(f"{path}:{first_line}: {exc}") from exc
    return runs
