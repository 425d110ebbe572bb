"""Tokenization, inverted index construction, and BM25 ranked retrieval."""

from __future__ import annotations

import json
import math
import re
from pathlib import Path
from typing import Iterable

from .models import Document, ValidationError

INDEX_FORMAT_VERSION = 1

# word characters minus underscore, on lowercased text: splits on anything
# non-alphanumeric, keeps digit runs as tokens
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric characters. No stemming."""
    return _TOKEN_RE.findall(text.lower())


class InvertedIndex:
    """BM25 index over documents indexed as title + full text.

    Immutable once built; concurrent searches are safe. Query-side term
    frequency is ignored: each unique query term is scored once, so whole
    conversations work as queries without reweighting.
    """

    def __init__(self, k1: float = 1.2, b: float = 0.75) -> None:
        if k1 <= 0:
            raise ValidationError(f"k1 must be > 0, got {k1}")
        if not 0.0 <= b <= 1.0:
            raise ValidationError(f"b must be in [0, 1], got {b}")
        self.k1 = k1
        self.b = b
        self.doc_ids: list[str] = []
        self.doc_lengths: list[int] = []
        self.postings: dict[str, list[tuple[int, int]]] = {}
        self.avg_doc_length = 0.0

    # -- construction --

    @classmethod
    def build(
        cls, corpus: Iterable[Document], k1: float = 1.2, b: float = 0.75
    ) -> "InvertedIndex":
        index = cls(k1=k1, b=b)
        seen: set[str] = set()
        for doc in corpus:
            if doc.doc_id in seen:
                raise ValidationError(f"duplicate doc_id {doc.doc_id!r} in corpus")
            seen.add(doc.doc_id)
            index._add(doc.doc_id, tokenize(doc.title + " " + doc.text))
        index._finish()
        return index

    def _add(self, doc_id: str, tokens: list[str]) -> None:
        ordinal = len(self.doc_ids)
        self.doc_ids.append(doc_id)
        self.doc_lengths.append(len(tokens))
        counts: dict[str, int] = {}
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
        for term, tf in counts.items():
            self.postings.setdefault(term, []).append((ordinal, tf))

    def _finish(self) -> None:
        if self.doc_ids:
            self.avg_doc_length = sum(self.doc_lengths) / len(self.doc_ids)
        for plist in self.postings.values():
            plist.sort(key=lambda p: p[0])

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)

    # -- retrieval --

    def idf(self, term: str) -> float:
        plist = self.postings.get(term)
        if not plist:
            return 0.0
        df = len(plist)
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def search(self, query_text: str, k: int) -> list[tuple[str, float]]:
        """Top-k documents by BM25, ties broken by doc_id ascending."""
        if k < 1:
            raise ValidationError(f"k must be >= 1, got {k}")
        terms = sorted(set(tokenize(query_text)))
        if not terms:
            return []
        scores: dict[int, float] = {}
        for term in terms:
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for ordinal, tf in plist:
                norm = self.k1 * (
                    1.0 - self.b + self.b * self.doc_lengths[ordinal] / self.avg_doc_length
                )
                contribution = idf * tf * (self.k1 + 1.0) / (tf + norm)
                scores[ordinal] = scores.get(ordinal, 0.0) + contribution
        ranked = sorted(
            scores.items(), key=lambda item: (-item[1], self.doc_ids[item[0]])
        )
        return [(self.doc_ids[o], s) for o, s in ranked[:k]]

    # -- persistence --

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {
            "format_version": INDEX_FORMAT_VERSION,
            "k1": self.k1,
            "b": self.b,
            "doc_count": self.doc_count,
            "avg_doc_length": self.avg_doc_length,
        }
        (directory / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
        with open(directory / "docs.jsonl", "w", encoding="utf-8") as f:
            for doc_id, length in zip(self.doc_ids, self.doc_lengths):
                f.write(json.dumps({"doc_id": doc_id, "length": length}) + "\n")
        with open(directory / "postings.jsonl", "w", encoding="utf-8") as f:
            for term in sorted(self.postings):
                f.write(
                    json.dumps({"term": term, "postings": self.postings[term]}) + "\n"
                )

    @classmethod
    def load(cls, directory: str | Path) -> "InvertedIndex":
        directory = Path(directory)
        meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
        version = meta.get("format_version")
        if version != INDEX_FORMAT_VERSION:
            raise ValidationError(
                f"index format version {version} unsupported "
                f"(expected {INDEX_FORMAT_VERSION})"
            )
        index = cls(k1=meta["k1"], b=meta["b"])
        with open(directory / "docs.jsonl", "r", encoding="utf-8") as f:
            for line in f:
                obj = json.loads(line)
                index.doc_ids.append(obj["doc_id"])
                index.doc_lengths.append(obj["length"])
        with open(directory / "postings.jsonl", "r", encoding="utf-8") as f:
            for line in f:
                obj = json.loads(line)
                index.postings[obj["term"]] = [tuple(p) for p in obj["postings"]]
        index.avg_doc_length = meta["avg_doc_length"]
        if index.doc_count != meta["doc_count"]:
            raise ValidationError(
                f"index corrupt: meta says {meta['doc_count']} docs, "
                f"found {index.doc_count}"
            )
        return index
