"""Language-model grounded retrieval.

Three stages per conversation: an LLM generates up to n (title, description)
candidates; each candidate pulls its k nearest corpus entries by embedding
similarity over "title. first_sentence" texts; the LLM then grounds the
candidate to one of those entries or rejects it. Surviving documents are
emitted in generation order.

Providers are pluggable. HTTP providers follow the common chat-completion
and embedding JSON conventions; deterministic mock providers cover tests
and CI.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .models import Document, ValidationError

logger = logging.getLogger(__name__)


class ProviderError(RuntimeError):
    """An LLM or embedding provider failed after retries."""


@dataclass(frozen=True)
class GeneratedCandidate:
    rank_in_generation: int  # 1-based, order the model proposed it
    title: str
    description: str

    def __post_init__(self) -> None:
        if not self.title:
            raise ValidationError("candidate title must be non-empty")
        if self.rank_in_generation < 1:
            raise ValidationError("generation rank is 1-based")

    @property
    def grounding_text(self) -> str:
        return f"{self.title}. {self.description}"


class LlmProvider(Protocol):
    def complete(
        self, messages: Sequence[dict[str, str]], temperature: float, max_tokens: int
    ) -> str: ...


class EmbeddingProvider(Protocol):
    provider_id: str
    dim: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


# -- prompt templates (editable) --

GENERATION_SYSTEM_PROMPT = (
    "You suggest encyclopedia articles that would add useful context to an "
    "ongoing conversation."
)

GENERATION_PROMPT_TEMPLATE = """Read the conversation below and propose up to {n} encyclopedia articles \
that would give the participants useful context: main topics, key people, \
events, or concepts mentioned. Prefer relevant but diverse suggestions.

Conversation:
{conversation}

Answer with one suggestion per line, numbered, in exactly this format:
1. Article Title :: one sentence describing the article
"""

GROUNDING_SYSTEM_PROMPT = (
    "You match a suggested article against a list of real encyclopedia entries."
)

GROUNDING_PROMPT_TEMPLATE = """A suggested article:
{title} :: {description}

Candidate entries:
{options}
0. none of these

Which entry describes the same concept as the suggestion? Answer with the \
single number of the best entry, or 0 if none match.
"""


# -- candidate generation and parsing --

_CANDIDATE_LINE_RE = re.compile(r"^\s*\d+\s*[.)]\s*(.+?)\s*::\s*(.+?)\s*$")


def parse_candidates(text: str) -> list[tuple[str, str]]:
    """Extract (title, description) pairs from generated text.

    Accepts lines shaped like ``N. Title :: description``; anything else is
    ignored. Duplicate titles keep the first occurrence.
    """
    pairs: list[tuple[str, str]] = []
    seen: set[str] = set()
    for line in text.splitlines():
        match = _CANDIDATE_LINE_RE.match(line)
        if not match:
            continue
        title, description = match.group(1), match.group(2)
        key = title.casefold()
        if key in seen:
            continue
        seen.add(key)
        pairs.append((title, description))
    return pairs


def generate_candidates(
    llm: LlmProvider,
    conversation_text: str,
    n: int = 20,
    temperature: float = 0.7,
    max_tokens: int = 1024,
) -> list[GeneratedCandidate]:
    """Ask the LLM for up to n candidates; ranks follow generation order."""
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    prompt = GENERATION_PROMPT_TEMPLATE.format(n=n, conversation=conversation_text)
    text = llm.complete(
        [
            {"role": "system", "content": GENERATION_SYSTEM_PROMPT},
            {"role": "user", "content": prompt},
        ],
        temperature=temperature,
        max_tokens=max_tokens,
    )
    pairs = parse_candidates(text)[:n]
    return [
        GeneratedCandidate(rank_in_generation=i, title=t, description=d)
        for i, (t, d) in enumerate(pairs, 1)
    ]


# -- grounding corpus (embedded title + first sentence entries) --

GROUNDING_FORMAT_VERSION = 1


def _text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class GroundingCorpus:
    doc_ids: list[str]
    titles: list[str]
    first_sentences: list[str]
    vectors: np.ndarray  # unit-normalized, one row per doc

    def __len__(self) -> int:
        return len(self.doc_ids)


def grounding_entry_text(doc: Document) -> str:
    return f"{doc.title}. {doc.first_sentence}"


def build_grounding_corpus(
    corpus: Iterable[Document],
    embedder: EmbeddingProvider,
    cache_dir: str | Path | None = None,
    batch_size: int = 64,
) -> GroundingCorpus:
    """Embed every document's "title. first_sentence" entry, reusing cached
    vectors for unchanged texts. Only new or changed entries hit the
    provider; removed documents fall out of the cache."""
    docs = list(corpus)
    texts = [grounding_entry_text(d) for d in docs]
    hashes = [_text_hash(t) for t in texts]

    cached: dict[str, np.ndarray] = {}
    cache_path = None
    if cache_dir is not None:
        cache_path = Path(cache_dir)
        cached = _load_cache(cache_path, embedder)

    vectors: list[np.ndarray | None] = [cached.get(h) for h in hashes]
    missing = [i for i, v in enumerate(vectors) if v is None]
    for start in range(0, len(missing), batch_size):
        chunk = missing[start : start + batch_size]
        embedded = embedder.embed([texts[i] for i in chunk])
        embedded = np.asarray(embedded, dtype=np.float64)
        norms = np.linalg.norm(embedded, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            embedded = embedded / norms[:, np.newaxis]
        for row, i in enumerate(chunk):
            vectors[i] = embedded[row]

    matrix = np.vstack([v for v in vectors]) if vectors else np.zeros((0, embedder.dim))
    built = GroundingCorpus(
        doc_ids=[d.doc_id for d in docs],
        titles=[d.title for d in docs],
        first_sentences=[d.first_sentence for d in docs],
        vectors=matrix,
    )
    if cache_path is not None:
        _save_cache(cache_path, embedder, hashes, built)
    return built


def _cache_files(cache_dir: Path) -> tuple[Path, Path]:
    return cache_dir / "grounding_meta.json", cache_dir / "grounding_vectors.npz"


def _load_cache(cache_dir: Path, embedder: EmbeddingProvider) -> dict[str, np.ndarray]:
    meta_path, data_path = _cache_files(cache_dir)
    if not meta_path.exists() or not data_path.exists():
        return {}
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return {}
    if (
        meta.get("format_version") != GROUNDING_FORMAT_VERSION
        or meta.get("provider_id") != embedder.provider_id
        or meta.get("dim") != embedder.dim
    ):
        return {}
    data = np.load(data_path, allow_pickle=False)
    hashes = [h for h in data["hashes"]]
    return {str(h): vec for h, vec in zip(hashes, data["vectors"])}


def _save_cache(
    cache_dir: Path,
    embedder: EmbeddingProvider,
    hashes: list[str],
    corpus: GroundingCorpus,
) -> None:
    cache_dir.mkdir(parents=True, exist_ok=True)
    meta_path, data_path = _cache_files(cache_dir)
    corpus_hash = _text_hash(
        "\n".join(sorted(f"{d}:{h}" for d, h in zip(corpus.doc_ids, hashes)))
    )
    meta = {
        "format_version": GROUNDING_FORMAT_VERSION,
        "provider_id": embedder.provider_id,
        "dim": embedder.dim,
        "corpus_hash": corpus_hash,
        "entries": len(corpus.doc_ids),
    }
    meta_path.write_text(json.dumps(meta, indent=2), encoding="utf-8")
    np.savez(
        data_path,
        hashes=np.array(hashes),
        vectors=corpus.vectors,
    )


def retrieve_for_candidate(
    candidate: GeneratedCandidate,
    grounding: GroundingCorpus,
    embedder: EmbeddingProvider,
    k: int,
) -> list[tuple[str, float]]:
    """Exhaustive cosine scan for the candidate's nearest entries; ties
    break by doc_id ascending."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if len(grounding) == 0:
        return []
    query = np.asarray(embedder.embed([candidate.grounding_text]), dtype=np.float64)[0]
    norm = np.linalg.norm(query)
    if abs(norm - 1.0) > 1e-6 and norm > 0:
        query = query / norm
    scores = grounding.vectors @ query
    order = sorted(range(len(grounding)), key=lambda i: (-scores[i], grounding.doc_ids[i]))
    return [(grounding.doc_ids[i], float(scores[i])) for i in order[:k]]


# -- grounding --


def ground(
    llm: LlmProvider,
    candidate: GeneratedCandidate,
    options: Sequence[tuple[str, str, str]],  # (doc_id, title, first_sentence)
    temperature: float = 0.0,
    max_tokens: int = 8,
) -> str | None:
    """Ask the LLM which option matches the candidate; None drops it.

    An unparseable answer falls back to the top-ranked option (logged), so a
    flaky model degrades to nearest-neighbor linking.
    """
    if not options:
        return None
    lines = [
        f"{i}. {title} :: {sentence}"
        for i, (_, title, sentence) in enumerate(options, 1)
    ]
    prompt = GROUNDING_PROMPT_TEMPLATE.format(
        title=candidate.title,
        description=candidate.description,
        options="\n".join(lines),
    )
    answer = llm.complete(
        [
            {"role": "system", "content": GROUNDING_SYSTEM_PROMPT},
            {"role": "user", "content": prompt},
        ],
        temperature=temperature,
        max_tokens=max_tokens,
    )
    choice = _parse_choice(answer, len(options))
    if choice is None:
        logger.warning(
            "unparseable grounding answer %r for candidate %r; using top option",
            answer,
            candidate.title,
        )
        return options[0][0]
    if choice == 0:
        return None
    return options[choice - 1][0]


def _parse_choice(answer: str, n_options: int) -> int | None:
    text = answer.strip().lower()
    if re.match(r"^\s*none\b", text):
        return 0
    match = re.search(r"-?\d+", text)
    if not match:
        return None
    value = int(match.group(0))
    if 0 <= value <= n_options:
        return value
    return None


# -- full pipeline --


@dataclass
class LmgrTrace:
    """Per-candidate record of what the pipeline did, for audits."""

    candidate: GeneratedCandidate
    retrieved: list[tuple[str, float]]
    grounded_doc_id: str | None


def lmgr_retrieve(
    llm: LlmProvider,
    embedder: EmbeddingProvider,
    grounding: GroundingCorpus,
    conversation_text: str,
    n: int = 20,
    k: int = 5,
    trace: list[LmgrTrace] | None = None,
) -> list[tuple[str, float]]:
    """Generate, retrieve, ground; one document per surviving candidate.

    The result keeps generation order, deduplicates on doc_id keeping the
    earliest candidate, and scores entries 1/position so the list serializes
    as a well-formed run.
    """
    candidates = generate_candidates(llm, conversation_text, n=n)
    entry_by_id = {
        doc_id: (doc_id, title, sentence)
        for doc_id, title, sentence in zip(
            grounding.doc_ids, grounding.titles, grounding.first_sentences
        )
    }
    chosen: list[str] = []
    taken: set[str] = set()
    for candidate in candidates:
        nearest = retrieve_for_candidate(candidate, grounding, embedder, k)
        options = [entry_by_id[doc_id] for doc_id, _ in nearest]
        doc_id = ground(llm, candidate, options)
        if trace is not None:
            trace.append(LmgrTrace(candidate, nearest, doc_id))
        if doc_id is None or doc_id in taken:
            continue
        taken.add(doc_id)
        chosen.append(doc_id)
    return [(doc_id, 1.0 / position) for position, doc_id in enumerate(chosen, 1)]


class LmgrRetriever:
    """Harness-facing adapter: retrieve(context, k) caps the emitted list at
    the run cutoff while the pipeline's own n and grounding k stay fixed."""

    def __init__(
        self,
        llm: LlmProvider,
        embedder: EmbeddingProvider,
        grounding: GroundingCorpus,
        n: int = 20,
        ground_k: int = 5,
    ):
        self.llm = llm
        self.embedder = embedder
        self.grounding = grounding
        self.n = n
        self.ground_k = ground_k

    def retrieve(self, context: str, k: int) -> list[tuple[str, float]]:
        results = lmgr_retrieve(
            self.llm, self.embedder, self.grounding, context, n=self.n, k=self.ground_k
        )
        return results[:k]


# -- providers --


class HttpLlmProvider:
    """Chat-completion endpoint client: POST {base_url}/chat/completions."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str = "",
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 1.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff

    def complete(
        self, messages: Sequence[dict[str, str]], temperature: float, max_tokens: int
    ) -> str:
        import requests

        payload = {
            "model": self.model,
            "messages": list(messages),
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                response = requests.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout,
                )
                response.raise_for_status()
                return response.json()["choices"][0]["message"]["content"]
            except Exception as exc:  # noqa: BLE001 - retry any transport failure
                last_error = exc
                if attempt < self.max_retries - 1:
                    time.sleep(self.backoff * 2**attempt)
        raise ProviderError(f"chat completion failed after retries: {last_error}")


class HttpEmbeddingProvider:
    """Embedding endpoint client: POST {base_url}/embeddings."""

    def __init__(
        self,
        base_url: str,
        model: str,
        dim: int,
        api_key: str = "",
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 1.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.dim = dim
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.provider_id = f"http:{model}:d{dim}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                response = requests.post(
                    f"{self.base_url}/embeddings",
                    json={"model": self.model, "input": list(texts)},
                    headers=headers,
                    timeout=self.timeout,
                )
                response.raise_for_status()
                rows = [item["embedding"] for item in response.json()["data"]]
                matrix = np.asarray(rows, dtype=np.float64)
                norms = np.linalg.norm(matrix, axis=1, keepdims=True)
                norms[norms == 0.0] = 1.0
                return matrix / norms
            except Exception as exc:  # noqa: BLE001
                last_error = exc
                if attempt < self.max_retries - 1:
                    time.sleep(self.backoff * 2**attempt)
        raise ProviderError(f"embedding failed after retries: {last_error}")


# -- deterministic mock providers --


class HashEmbeddingProvider:
    """Text-keyed pseudo-random unit vectors: identical text, identical
    vector, no service required. Good enough for cache plumbing and for
    exercising the pipeline end to end."""

    def __init__(self, dim: int = 64):
        self.dim = dim
        self.provider_id = f"hash-v1:d{dim}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        rows = []
        for text in texts:
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            seed = int.from_bytes(digest[:8], "big")
            rng = np.random.default_rng(seed)
            vec = rng.standard_normal(self.dim)
            rows.append(vec / np.linalg.norm(vec))
        return np.asarray(rows, dtype=np.float64)


class ScriptedLlmProvider:
    """Replays a fixed sequence of responses; raises when exhausted."""

    def __init__(self, responses: Sequence[str]):
        self.responses = list(responses)
        self.calls: list[Sequence[dict[str, str]]] = []

    def complete(
        self, messages: Sequence[dict[str, str]], temperature: float, max_tokens: int
    ) -> str:
        self.calls.append(messages)
        if not self.responses:
            raise ProviderError("scripted provider exhausted")
        return self.responses.pop(0)


class OverlapMockLlm:
    """Rule-based stand-in for a real model, used by --mock runs.

    Generation proposes the corpus entries whose title and first sentence
    share the most tokens with the conversation; grounding picks the option
    whose title matches the candidate exactly, else the first option.
    """

    def __init__(self, corpus: Sequence[Document], n: int = 20):
        self.entries = [(d.title, d.first_sentence) for d in corpus]
        self.n = n

    def complete(
        self, messages: Sequence[dict[str, str]], temperature: float, max_tokens: int
    ) -> str:
        from .index import tokenize

        prompt = messages[-1]["content"]
        if "Candidate entries:" in prompt:
            suggestion = prompt.split("\n", 1)[1].split("::")[0].strip().casefold()
            for line in prompt.splitlines():
                match = re.match(r"^(\d+)\.\s*(.+?)\s*::", line)
                if match and match.group(2).strip().casefold() == suggestion:
                    return match.group(1)
            return "1"
        conversation_tokens = set(tokenize(prompt))
        scored = []
        for title, sentence in self.entries:
            overlap = len(set(tokenize(f"{title} {sentence}")) & conversation_tokens)
            if overlap > 0:
                scored.append((-overlap, title, sentence))
        scored.sort()
        lines = [
            f"{i}. {title} :: {sentence}"
            for i, (_, title, sentence) in enumerate(scored[: self.n], 1)
        ]
        return "\n".join(lines)
