"""HTTP back end for relevance annotation.

Serves one conversation's pool per task, collects per-document judgments,
and exports aggregated qrels. Task assignment uses an atomic claim with a
lease timeout so abandoned tasks return to the queue; accepted judgments go
straight to an append-only JSONL log, which is replayed on startup.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .formats import write_qrels
from .models import (
    MIN_SUMMARY_WORDS,
    Conversation,
    Document,
    EvidenceSpan,
    Judgment,
    ValidationError,
    summary_word_count,
)
from .pooling import (
    DEFAULT_REPLICATION,
    PoolEntry,
    export_qrels,
    group_judgments,
    snap_span_to_sentences,
)

DEFAULT_LEASE_SECONDS = 30 * 60


class SpanPayload(BaseModel):
    turn: int
    char_start: int
    char_end: int


class JudgmentPayload(BaseModel):
    worker_id: str
    conversation_id: str
    doc_id: str
    label: int
    evidence: list[SpanPayload] = []
    summary: str = ""


@dataclass
class AnnotationState:
    """All mutable service state, guarded by a single lock."""

    pools: dict[str, PoolEntry]
    conversations: dict[str, Conversation]
    documents: dict[str, Document] = field(default_factory=dict)
    replication: int = DEFAULT_REPLICATION
    lease_seconds: float = DEFAULT_LEASE_SECONDS
    log_path: Path | None = None
    clock: object = time.monotonic

    def __post_init__(self) -> None:
        self.lock = threading.Lock()
        self.judgments: list[Judgment] = []
        self.judged_pairs: dict[tuple[str, str, str], Judgment] = {}
        self.completed: dict[str, set[str]] = {}  # worker -> conversations done
        self.claims: dict[str, tuple[str, float]] = {}  # conv -> (worker, expiry)
        if self.log_path is not None and Path(self.log_path).exists():
            self._replay_log()

    # -- persistence --

    def _replay_log(self) -> None:
        assert self.log_path is not None
        with open(self.log_path, "r", encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                self._admit(judgment_from_dict(json.loads(line)), persist=False)

    def _append_log(self, judgment: Judgment) -> None:
        if self.log_path is None:
            return
        with open(self.log_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(judgment_to_dict(judgment)) + "\n")

    # -- task assignment --

    def _workers_engaged(self, conv_id: str, now: float) -> set[str]:
        engaged = {
            worker
            for worker, done in self.completed.items()
            if conv_id in done
        }
        claim = self.claims.get(conv_id)
        if claim is not None and claim[1] > now:
            engaged.add(claim[0])
        return engaged

    def next_task(self, worker_id: str) -> dict | None:
        now = float(self.clock())
        with self.lock:
            # an active claim by this worker is simply re-served
            for conv_id, (claimant, expiry) in self.claims.items():
                if claimant == worker_id and expiry > now:
                    return self._task_payload(conv_id, worker_id)
            done = self.completed.get(worker_id, set())
            for conv_id in self.pools:
                if conv_id in done:
                    continue
                engaged = self._workers_engaged(conv_id, now)
                if worker_id in engaged or len(engaged) >= self.replication:
                    continue
                self.claims[conv_id] = (worker_id, now + self.lease_seconds)
                return self._task_payload(conv_id, worker_id)
        return None

    def _task_payload(self, conv_id: str, worker_id: str) -> dict:
        conv = self.conversations[conv_id]
        pool = self.pools[conv_id]
        docs = []
        for doc_id in pool.doc_ids:
            doc = self.documents.get(doc_id)
            docs.append(
                {
                    "doc_id": doc_id,
                    "title": doc.title if doc else doc_id,
                    "first_sentence": doc.first_sentence if doc else "",
                    "text": doc.text if doc else "",
                }
            )
        judged = {
            doc_id
            for (w, c, doc_id) in self.judged_pairs
            if w == worker_id and c == conv_id
        }
        return {
            "conversation": {
                "id": conv.id,
                "title": conv.title,
                "category": conv.category,
                "utterances": [
                    {"turn": u.turn_index, "author": u.author_id, "text": u.text}
                    for u in conv.utterances
                ],
            },
            "documents": docs,
            "already_judged": sorted(judged),
            "min_summary_words": MIN_SUMMARY_WORDS,
        }

    # -- judgment intake --

    def submit(self, payload: JudgmentPayload) -> dict:
        problems: dict[str, str] = {}
        conv = self.conversations.get(payload.conversation_id)
        pool = self.pools.get(payload.conversation_id)
        if conv is None or pool is None:
            problems["conversation_id"] = "unknown conversation"
        elif payload.doc_id not in pool.doc_ids:
            problems["doc_id"] = "document is not in this conversation's pool"
        if not payload.worker_id.strip():
            problems["worker_id"] = "worker id required"
        if payload.label not in (0, 1, 2):
            problems["label"] = "label must be 0, 1 or 2"
        if summary_word_count(payload.summary) < MIN_SUMMARY_WORDS:
            problems["summary"] = (
                f"summary needs at least {MIN_SUMMARY_WORDS} words"
            )
        if payload.label in (1, 2) and not payload.evidence:
            problems["evidence"] = "labels 1 and 2 require highlighted evidence"

        spans: list[EvidenceSpan] = []
        if conv is not None and "evidence" not in problems:
            for i, span in enumerate(payload.evidence):
                try:
                    parsed = EvidenceSpan(span.turn, span.char_start, span.char_end)
                    if parsed.turn_index > conv.length:
                        raise ValidationError(
                            f"turn {parsed.turn_index} outside conversation"
                        )
                    text = conv.utterances[parsed.turn_index - 1].text
                    if parsed.char_end > len(text):
                        raise ValidationError("span exceeds utterance text")
                    spans.append(snap_span_to_sentences(conv, parsed))
                except ValidationError as exc:
                    problems[f"evidence[{i}]"] = str(exc)
        if problems:
            raise HTTPException(status_code=422, detail=problems)

        try:
            judgment = Judgment(
                worker_id=payload.worker_id,
                conversation_id=payload.conversation_id,
                doc_id=payload.doc_id,
                label=payload.label,
                evidence=tuple(spans),
                summary=payload.summary,
            )
        except ValidationError as exc:
            raise HTTPException(status_code=422, detail={"judgment": str(exc)})

        with self.lock:
            key = (judgment.worker_id, judgment.conversation_id, judgment.doc_id)
            if key in self.judged_pairs:
                raise HTTPException(
                    status_code=409,
                    detail={"judgment": "already submitted; first write wins"},
                )
            pair_count = sum(
                1
                for (_, c, d) in self.judged_pairs
                if c == judgment.conversation_id and d == judgment.doc_id
            )
            if pair_count >= self.replication:
                raise HTTPException(
                    status_code=409,
                    detail={"judgment": "pair already fully judged"},
                )
            self._admit(judgment, persist=True)
            pool = self.pools[judgment.conversation_id]
            done = all(
                (judgment.worker_id, judgment.conversation_id, d) in self.judged_pairs
                for d in pool.doc_ids
            )
            if done:
                self.completed.setdefault(judgment.worker_id, set()).add(
                    judgment.conversation_id
                )
                claim = self.claims.get(judgment.conversation_id)
                if claim is not None and claim[0] == judgment.worker_id:
                    del self.claims[judgment.conversation_id]
        return {"accepted": True, "conversation_complete": done}

    def _admit(self, judgment: Judgment, persist: bool) -> None:
        key = (judgment.worker_id, judgment.conversation_id, judgment.doc_id)
        if key in self.judged_pairs:
            return
        self.judged_pairs[key] = judgment
        self.judgments.append(judgment)
        if persist:
            self._append_log(judgment)
        pool = self.pools.get(judgment.conversation_id)
        if pool is not None:
            done = all(
                (judgment.worker_id, judgment.conversation_id, d) in self.judged_pairs
                for d in pool.doc_ids
            )
            if done:
                self.completed.setdefault(judgment.worker_id, set()).add(
                    judgment.conversation_id
                )

    # -- reporting --

    def progress(self) -> dict:
        with self.lock:
            grouped = group_judgments(self.judgments)
            total_pairs = sum(len(p.doc_ids) for p in self.pools.values())
            complete_pairs = sum(
                1 for js in grouped.values() if len(js) >= self.replication
            )
            per_conversation = {}
            for conv_id, pool in self.pools.items():
                workers_done = sorted(
                    w for w, done in self.completed.items() if conv_id in done
                )
                per_conversation[conv_id] = {
                    "pool_size": len(pool.doc_ids),
                    "workers_completed": workers_done,
                    "complete": len(workers_done) >= self.replication,
                }
            return {
                "conversations": len(self.pools),
                "pairs": total_pairs,
                "judgments": len(self.judgments),
                "complete_pairs": complete_pairs,
                "required_replication": self.replication,
                "per_conversation": per_conversation,
            }

    def export(self) -> tuple[str, dict]:
        with self.lock:
            qrels, warnings, incomplete = export_qrels(
                self.judgments, required=self.replication
            )
        lines = [
            f"{q.conversation_id}\t{q.doc_id}\t{q.grade}\t{q.ideal_turn}"
            for q in qrels
        ]
        body = "\n".join(lines) + ("\n" if lines else "")
        meta = {
            "qrels": len(qrels),
            "incomplete_pairs": [list(pair) for pair in incomplete],
            "warnings": [
                {"conversation_id": w.conversation_id, "doc_id": w.doc_id, "message": w.message}
                for w in warnings
            ],
        }
        return body, meta


def judgment_to_dict(j: Judgment) -> dict:
    return {
        "worker_id": j.worker_id,
        "conversation_id": j.conversation_id,
        "doc_id": j.doc_id,
        "label": j.label,
        "evidence": [
            {"turn": s.turn_index, "char_start": s.char_start, "char_end": s.char_end}
            for s in j.evidence
        ],
        "summary": j.summary,
    }


def judgment_from_dict(obj: dict) -> Judgment:
    return Judgment(
        worker_id=obj["worker_id"],
        conversation_id=obj["conversation_id"],
        doc_id=obj["doc_id"],
        label=obj["label"],
        evidence=tuple(
            EvidenceSpan(s["turn"], s["char_start"], s["char_end"])
            for s in obj.get("evidence", [])
        ),
        summary=obj["summary"],
    )


def read_judgment_log(path: str | Path) -> list[Judgment]:
    judgments = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                judgments.append(judgment_from_dict(json.loads(line)))
    return judgments


def create_app(state: AnnotationState, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="annotation service")

    @app.get("/task")
    def get_task(worker: str = Query(..., min_length=1)) -> JSONResponse:
        task = state.next_task(worker)
        if task is None:
            return JSONResponse({"task": None}, status_code=200)
        return JSONResponse({"task": task})

    @app.post("/judgment")
    def post_judgment(payload: JudgmentPayload) -> dict:
        return state.submit(payload)

    @app.get("/progress")
    def get_progress() -> dict:
        return state.progress()

    @app.get("/export/qrels", response_class=PlainTextResponse)
    def get_qrels() -> str:
        body, _ = state.export()
        return body

    @app.get("/export/report")
    def get_export_report() -> dict:
        _, meta = state.export()
        return meta

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app


def export_qrels_file(
    judgments: list[Judgment], path: str | Path, required: int = DEFAULT_REPLICATION
) -> tuple[int, list]:
    """CLI-facing export: aggregate a judgment log straight to a qrels file."""
    qrels, warnings, _ = export_qrels(judgments, required=required)
    write_qrels(qrels, path)
    return len(qrels), warnings
