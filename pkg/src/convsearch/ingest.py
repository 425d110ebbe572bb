"""Corpus construction: thread filtering, link mapping, chain sampling,
split generation, and dataset statistics.

Raw threads arrive as one JSON object per line:

    {"post": {"id", "title", "body", "author", "created_at", "score", "nsfw"},
     "comments": [{"id", "parent_id", "body", "author", "created_at"}, ...]}

``parent_id`` of null (or missing) attaches a comment to the post. The
pipeline is a pure per-thread transformation: filter, enumerate nested
chains, resolve link labels against the corpus; then a sequential pass
builds the splits.
"""

from __future__ import annotations

import html
import json
import math
import re
import urllib.parse
from dataclasses import dataclass, field
from pathlib import Path
from random import Random
from typing import Callable, Iterable, Iterator

from .index import tokenize
from .models import Conversation, Document, Utterance, ValidationError

# -- raw thread model --


@dataclass(frozen=True)
class RawPost:
    id: str
    title: str
    body: str
    author: str
    created_at: int
    score: int
    nsfw: bool
    subreddit: str = ""


@dataclass(frozen=True)
class RawComment:
    id: str
    parent_id: str | None  # None = replies to the post
    body: str
    author: str
    created_at: int


@dataclass(frozen=True)
class RawThread:
    post: RawPost
    comments: tuple[RawComment, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "comments", tuple(self.comments))
        ids = [c.id for c in self.comments]
        if len(ids) != len(set(ids)):
            raise ValidationError(f"thread {self.post.id!r}: duplicate comment ids")
        known = set(ids)
        for c in self.comments:
            if c.parent_id is not None and c.parent_id not in known:
                raise ValidationError(
                    f"thread {self.post.id!r}: comment {c.id!r} has unknown "
                    f"parent {c.parent_id!r}"
                )
        # parent links must not form cycles
        for c in self.comments:
            seen = {c.id}
            cursor = c.parent_id
            by_id = {x.id: x for x in self.comments}
            while cursor is not None:
                if cursor in seen:
                    raise ValidationError(f"thread {self.post.id!r}: comment cycle")
                seen.add(cursor)
                cursor = by_id[cursor].parent_id


def thread_from_dict(obj: dict) -> RawThread:
    try:
        p = obj["post"]
        post = RawPost(
            id=str(p["id"]),
            title=p.get("title", ""),
            body=p.get("body", ""),
            author=p.get("author", ""),
            created_at=int(p.get("created_at", 0)),
            score=int(p.get("score", 0)),
            nsfw=bool(p.get("nsfw", False)),
            subreddit=p.get("subreddit", ""),
        )
        comments = tuple(
            RawComment(
                id=str(c["id"]),
                parent_id=None if c.get("parent_id") is None else str(c["parent_id"]),
                body=c.get("body", ""),
                author=c.get("author", ""),
                created_at=int(c.get("created_at", 0)),
            )
            for c in obj.get("comments", [])
        )
        return RawThread(post=post, comments=comments)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed thread record: {exc}") from exc


def read_threads(path: str | Path) -> Iterator[RawThread]:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield thread_from_dict(json.loads(line))


# -- text cleaning and link extraction --

_URL_RE = re.compile(r"https?://[^\s)\]>\"']+")
_MARKDOWN_LINK_RE = re.compile(r"\[([^\]]*)\]\(\s*(https?://[^\s)]+)\s*\)")
_MARKDOWN_IMAGE_RE = re.compile(r"!\[[^\]]*\]\([^)]*\)")
_HTML_TAG_RE = re.compile(r"</?[a-zA-Z][^>]*>")
_EMPHASIS_RE = re.compile(r"(\*{1,3}|_{1,3}|~~|`)")

_WIKI_HOST_RE = re.compile(r"(?:^|\.)(?:m\.)?wikipedia\.org$")

_MEDIA_EXTENSIONS = (".jpg", ".jpeg", ".png", ".gif", ".gifv", ".webm", ".mp4", ".mp3")
_MEDIA_HOSTS = {
    "i.redd.it",
    "v.redd.it",
    "i.imgur.com",
    "imgur.com",
    "gfycat.com",
    "youtube.com",
    "www.youtube.com",
    "youtu.be",
}


def is_wikipedia_url(url: str) -> bool:
    try:
        host = urllib.parse.urlsplit(url).hostname or ""
    except ValueError:
        return False
    return bool(_WIKI_HOST_RE.search(host))


def is_media_url(url: str) -> bool:
    try:
        parts = urllib.parse.urlsplit(url)
    except ValueError:
        return False
    host = parts.hostname or ""
    path = parts.path.lower()
    return host in _MEDIA_HOSTS or path.endswith(_MEDIA_EXTENSIONS)


def wikipedia_title_from_url(url: str) -> str | None:
    """Article title from a /wiki/ URL: percent-decoded, underscores to
    spaces, fragment and query dropped. None when the path is not an
    article."""
    if not is_wikipedia_url(url):
        return None
    path = urllib.parse.urlsplit(url).path
    marker = "/wiki/"
    if marker not in path:
        return None
    raw = path.split(marker, 1)[1]
    title = urllib.parse.unquote(raw).replace("_", " ").strip()
    return title or None


@dataclass
class CleanedText:
    text: str
    wiki_titles: list[str] = field(default_factory=list)
    external_urls: list[str] = field(default_factory=list)
    media: bool = False


def clean_text(raw: str) -> CleanedText:
    """Strip HTML formatting and link markup, recording what was removed.

    Markdown links keep their anchor text; bare URLs vanish. Wikipedia
    targets are collected as label candidates, anything else as external
    URLs (which reject the thread upstream).
    """
    result = CleanedText(text="")
    text = html.unescape(raw)
    if _MARKDOWN_IMAGE_RE.search(text):
        result.media = True
    text = _MARKDOWN_IMAGE_RE.sub(" ", text)

    def classify(url: str) -> None:
        if is_media_url(url):
            result.media = True
        elif is_wikipedia_url(url):
            title = wikipedia_title_from_url(url)
            if title:
                result.wiki_titles.append(title)
            else:
                result.external_urls.append(url)
        else:
            result.external_urls.append(url)

    def replace_markdown(match: re.Match) -> str:
        classify(match.group(2))
        return match.group(1)

    text = _MARKDOWN_LINK_RE.sub(replace_markdown, text)

    def replace_bare(match: re.Match) -> str:
        classify(match.group(0))
        return " "

    text = _URL_RE.sub(replace_bare, text)
    text = _HTML_TAG_RE.sub(" ", text)
    text = _EMPHASIS_RE.sub("", text)
    result.text = re.sub(r"[ \t]+", " ", text).strip()
    return result


# -- language identification --

_STOPWORDS = frozenset(
    "the a an and or but if then is are was were be been being to of in on at "
    "for with as by from that this it its he she they we you i not do does did "
    "have has had will would can could so what when where who how".split()
)


def default_language_check(text: str) -> bool:
    """Heuristic English detector: mostly-ASCII letters plus a stopword hit
    rate once there is enough text to judge."""
    letters = [ch for ch in text if ch.isalpha()]
    if letters:
        ascii_ratio = sum(ch.isascii() for ch in letters) / len(letters)
        if ascii_ratio < 0.85:
            return False
    tokens = tokenize(text)
    if len(tokens) < 20:
        return True
    hits = sum(1 for t in tokens if t in _STOPWORDS)
    return hits / len(tokens) >= 0.05


# -- thread filtering --


@dataclass(frozen=True)
class Rejection:
    reason: str  # "nsfw" | "media" | "external_link" | "non_english" | ...
    detail: str = ""


@dataclass(frozen=True)
class FilteredThread:
    """A thread that passed the filters, with cleaned per-node text and the
    wiki titles each node linked, attributed by node."""

    post: RawPost
    post_text: str
    post_wiki_titles: tuple[str, ...]
    comments: tuple[RawComment, ...]  # bodies already cleaned
    comment_wiki_titles: dict[str, tuple[str, ...]]


def filter_thread(
    thread: RawThread,
    language_check: Callable[[str], bool] = default_language_check,
) -> FilteredThread | Rejection:
    """Apply the corpus quality rules to one thread.

    Rejection is a value, not an error: NSFW posts, embedded media,
    non-Wikipedia external links, and non-English text all reject.
    """
    if thread.post.nsfw:
        return Rejection("nsfw")

    post_title = clean_text(thread.post.title)
    post_body = clean_text(thread.post.body)
    if post_title.media or post_body.media:
        return Rejection("media", "post embeds media")
    external = post_title.external_urls + post_body.external_urls
    if external:
        return Rejection("external_link", external[0])

    cleaned_comments: list[RawComment] = []
    comment_titles: dict[str, tuple[str, ...]] = {}
    for comment in thread.comments:
        cleaned = clean_text(comment.body)
        if cleaned.media:
            return Rejection("media", f"comment {comment.id} embeds media")
        if cleaned.external_urls:
            return Rejection("external_link", cleaned.external_urls[0])
        cleaned_comments.append(
            RawComment(
                id=comment.id,
                parent_id=comment.parent_id,
                body=cleaned.text,
                author=comment.author,
                created_at=comment.created_at,
            )
        )
        comment_titles[comment.id] = tuple(cleaned.wiki_titles)

    full_text = "\n".join(
        [post_title.text, post_body.text] + [c.body for c in cleaned_comments]
    )
    if not language_check(full_text):
        return Rejection("non_english")

    return FilteredThread(
        post=thread.post,
        post_text=post_body.text,
        post_wiki_titles=tuple(post_title.wiki_titles + post_body.wiki_titles),
        comments=tuple(cleaned_comments),
        comment_wiki_titles=comment_titles,
    )


# -- nested chain sampling --


@dataclass(frozen=True)
class Chain:
    """One root-to-leaf path: the post followed by a strict parent-to-child
    comment sequence. Utterance texts are already cleaned; per-turn wiki
    titles ride along for label mapping."""

    conversation_id: str
    category: str
    title: str
    created_at: int
    score: int
    post_id: str
    texts: tuple[str, ...]
    authors: tuple[str, ...]
    wiki_titles_by_turn: tuple[tuple[str, ...], ...]


def sample_nested_chains(filtered: FilteredThread) -> list[Chain]:
    """Enumerate every root-to-leaf path with at least one comment.

    Children are visited in (created_at, id) order so chain numbering is
    deterministic for a given thread.
    """
    children: dict[str | None, list[RawComment]] = {}
    for comment in filtered.comments:
        children.setdefault(comment.parent_id, []).append(comment)
    for siblings in children.values():
        siblings.sort(key=lambda c: (c.created_at, c.id))

    post = filtered.post
    post_text = filtered.post_text.strip() or clean_text(post.title).text
    clean_title = clean_text(post.title).text
    paths: list[list[RawComment]] = []

    def walk(comment: RawComment, path: list[RawComment]) -> None:
        path.append(comment)
        kids = children.get(comment.id, [])
        if not kids:
            paths.append(list(path))
        else:
            for kid in kids:
                walk(kid, path)
        path.pop()

    for top in children.get(None, []):
        walk(top, [])

    chains: list[Chain] = []
    for number, path in enumerate(paths, 1):
        texts = [post_text] + [c.body for c in path]
        authors = [post.author] + [c.author for c in path]
        titles = [filtered.post_wiki_titles] + [
            filtered.comment_wiki_titles.get(c.id, ()) for c in path
        ]
        chains.append(
            Chain(
                conversation_id=f"{post.id}-{number}",
                category=post.subreddit,
                title=clean_title,
                created_at=post.created_at,
                score=post.score,
                post_id=post.id,
                texts=tuple(texts),
                authors=tuple(authors),
                wiki_titles_by_turn=tuple(titles),
            )
        )
    return chains


# -- link mapping --


class TitleResolver:
    """Maps Wikipedia article titles to corpus doc_ids.

    Exact (case-preserving) lookup first, case-insensitive fallback second;
    underscores and percent-encoding are already normalized away by the URL
    parser, so keys here are display titles.
    """

    def __init__(self, corpus: Iterable[Document]) -> None:
        self.exact: dict[str, str] = {}
        self.folded: dict[str, str] = {}
        for doc in corpus:
            title = doc.title.replace("_", " ").strip()
            self.exact.setdefault(title, doc.doc_id)
            self.folded.setdefault(title.casefold(), doc.doc_id)

    def resolve(self, title: str) -> str | None:
        title = title.replace("_", " ").strip()
        hit = self.exact.get(title)
        if hit is not None:
            return hit
        return self.folded.get(title.casefold())


def map_links(chain: Chain, resolver: TitleResolver) -> Conversation | Rejection:
    """Resolve a chain's wiki titles to doc_ids, building the Conversation.

    Rejects when any link misses the corpus or when no link exists at all:
    the dataset keeps only conversations with at least one resolvable label.
    Turns whose text cleaned down to nothing are dropped (with their links)
    before numbering.
    """
    texts, authors, titles_by_turn = [], [], []
    for text, author, titles in zip(chain.texts, chain.authors, chain.wiki_titles_by_turn):
        if text.strip():
            texts.append(text)
            authors.append(author)
            titles_by_turn.append(titles)
    if not texts:
        return Rejection("empty", "no utterance text survived cleaning")

    wiki_links: list[tuple[str, int]] = []
    for turn, titles in enumerate(titles_by_turn, 1):
        for title in titles:
            doc_id = resolver.resolve(title)
            if doc_id is None:
                return Rejection("unresolved_link", title)
            wiki_links.append((doc_id, turn))
    if not wiki_links:
        return Rejection("no_links")

    utterances = tuple(
        Utterance(turn_index=i, author_id=author, text=text)
        for i, (text, author) in enumerate(zip(texts, authors), 1)
    )
    return Conversation(
        id=chain.conversation_id,
        category=chain.category,
        title=chain.title,
        utterances=utterances,
        wiki_links=tuple(wiki_links),
    )


# -- splits --


@dataclass(frozen=True)
class SplitConfig:
    dev_size: int = 0
    test_size: int = 0
    future_dev_size: int = 0
    test_min_score: int = 20
    seed: int = 13

    def __post_init__(self) -> None:
        for name in ("dev_size", "test_size", "future_dev_size"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.test_min_score < 0:
            raise ValidationError("test_min_score must be >= 0")


@dataclass(frozen=True)
class DatedConversation:
    """A conversation plus the post metadata split generation needs."""

    conversation: Conversation
    created_at: int
    score: int

    @property
    def id(self) -> str:
        return self.conversation.id


@dataclass
class Splits:
    train: list[DatedConversation]
    dev: list[DatedConversation]
    future_dev: list[DatedConversation]
    test: list[DatedConversation]

    def as_dict(self) -> dict[str, list[DatedConversation]]:
        return {
            "train": self.train,
            "dev": self.dev,
            "future_dev": self.future_dev,
            "test": self.test,
        }


def make_splits(conversations: Iterable[DatedConversation], config: SplitConfig) -> Splits:
    """Partition conversations into train / dev / future-dev / test.

    Test draws one conversation per distinct category, restricted to posts
    scoring at least ``test_min_score``. Future-dev takes the chronologically
    latest conversations, which therefore sit strictly after every training
    timestamp. Dev is a uniform random sample of the remainder. All sampling
    is deterministic under the seed.
    """
    pool = sorted(conversations, key=lambda c: c.id)
    ids = [c.id for c in pool]
    if len(ids) != len(set(ids)):
        raise ValidationError("duplicate conversation ids in split input")
    rng = Random(config.seed)

    # test: distinct categories, score-gated
    eligible_by_category: dict[str, list[DatedConversation]] = {}
    for conv in pool:
        if conv.score >= config.test_min_score:
            eligible_by_category.setdefault(conv.conversation.category, []).append(conv)
    categories = sorted(eligible_by_category)
    if len(categories) < config.test_size:
        raise ValidationError(
            f"test split needs {config.test_size} distinct categories with "
            f"score >= {config.test_min_score}; only {len(categories)} eligible"
        )
    test: list[DatedConversation] = []
    for category in rng.sample(categories, config.test_size):
        test.append(rng.choice(eligible_by_category[category]))
    taken = {c.id for c in test}
    remaining = [c for c in pool if c.id not in taken]

    # future-dev: strictly later than everything left behind
    remaining.sort(key=lambda c: (c.created_at, c.id))
    if config.future_dev_size > len(remaining):
        raise ValidationError(
            f"future-dev split needs {config.future_dev_size} conversations; "
            f"only {len(remaining)} remain after test sampling"
        )
    split_point = len(remaining) - config.future_dev_size
    future_dev = remaining[split_point:]
    earlier = remaining[:split_point]
    if future_dev and earlier and earlier[-1].created_at >= future_dev[0].created_at:
        raise ValidationError(
            "future-dev split is not strictly later than the training data: "
            f"timestamp {future_dev[0].created_at} ties the boundary"
        )

    if config.dev_size > len(earlier):
        raise ValidationError(
            f"dev split needs {config.dev_size} conversations; only "
            f"{len(earlier)} remain"
        )
    dev = rng.sample(earlier, config.dev_size)
    dev_ids = {c.id for c in dev}
    train = [c for c in earlier if c.id not in dev_ids]
    return Splits(train=train, dev=sorted(dev, key=lambda c: c.id), future_dev=future_dev, test=sorted(test, key=lambda c: c.id))


# -- statistics --


@dataclass(frozen=True)
class SplitStats:
    total_conversations: int
    total_posts: int
    num_categories: int
    total_unique_users: int
    avg_turns: tuple[float, float]
    avg_words_per_conversation: tuple[float, float]
    avg_words_per_turn: tuple[float, float]
    avg_links: tuple[float, float]
    avg_unique_users: tuple[float, float]
    avg_comments_per_user: tuple[float, float]

    def to_dict(self) -> dict:
        def pair(p: tuple[float, float]) -> dict:
            return {"mean": p[0], "stddev": p[1]}

        return {
            "total_conversations": self.total_conversations,
            "total_posts": self.total_posts,
            "num_categories": self.num_categories,
            "total_unique_users": self.total_unique_users,
            "avg_turns": pair(self.avg_turns),
            "avg_words_per_conversation": pair(self.avg_words_per_conversation),
            "avg_words_per_turn": pair(self.avg_words_per_turn),
            "avg_links": pair(self.avg_links),
            "avg_unique_users": pair(self.avg_unique_users),
            "avg_comments_per_user": pair(self.avg_comments_per_user),
        }


def _mean_std(values: list[float]) -> tuple[float, float]:
    """Mean and population standard deviation."""
    if not values:
        return (0.0, 0.0)
    mean = sum(values) / len(values)
    variance = sum((v - mean) ** 2 for v in values) / len(values)
    return (mean, math.sqrt(variance))


def post_id_of(conversation_id: str) -> str:
    """Conversations are numbered ``<post_id>-<n>`` by the ingest pipeline;
    strip the chain number to recover the post."""
    head, sep, tail = conversation_id.rpartition("-")
    if sep and tail.isdigit():
        return head
    return conversation_id


def compute_stats(conversations: Iterable[Conversation]) -> SplitStats:
    convs = list(conversations)
    turns: list[float] = []
    conv_words: list[float] = []
    turn_words: list[float] = []
    links: list[float] = []
    users_per_conv: list[float] = []
    posts: set[str] = set()
    categories: set[str] = set()
    comments_by_user: dict[str, int] = {}

    for conv in convs:
        turns.append(float(conv.length))
        words = [len(tokenize(u.text)) for u in conv.utterances]
        conv_words.append(float(sum(words)))
        turn_words.extend(float(w) for w in words)
        links.append(float(len(conv.wiki_links)))
        authors = [u.author_id for u in conv.utterances]
        users_per_conv.append(float(len(set(authors))))
        posts.add(post_id_of(conv.id))
        categories.add(conv.category)
        for author in authors:
            comments_by_user[author] = comments_by_user.get(author, 0) + 1

    return SplitStats(
        total_conversations=len(convs),
        total_posts=len(posts),
        num_categories=len(categories),
        total_unique_users=len(comments_by_user),
        avg_turns=_mean_std(turns),
        avg_words_per_conversation=_mean_std(conv_words),
        avg_words_per_turn=_mean_std(turn_words),
        avg_links=_mean_std(links),
        avg_unique_users=_mean_std(users_per_conv),
        avg_comments_per_user=_mean_std([float(v) for v in comments_by_user.values()]),
    )


# -- whole-pipeline driver --


@dataclass
class IngestReport:
    threads_read: int = 0
    threads_rejected: dict[str, int] = field(default_factory=dict)
    chains_enumerated: int = 0
    conversations_kept: int = 0
    conversations_rejected: dict[str, int] = field(default_factory=dict)

    def note_thread_rejection(self, reason: str) -> None:
        self.threads_rejected[reason] = self.threads_rejected.get(reason, 0) + 1

    def note_conversation_rejection(self, reason: str) -> None:
        self.conversations_rejected[reason] = (
            self.conversations_rejected.get(reason, 0) + 1
        )


def ingest_threads(
    threads: Iterable[RawThread],
    resolver: TitleResolver,
    language_check: Callable[[str], bool] = default_language_check,
    report: IngestReport | None = None,
    jobs: int = 1,
) -> Iterator[DatedConversation]:
    """filter -> sample chains -> map links, thread by thread.

    Filtering is a pure per-thread transformation, so with jobs > 1 it runs
    on a thread pool in submission order (pays off when the pluggable
    language check calls out to a service; output is identical either way).
    """
    report = report if report is not None else IngestReport()

    def filtered_stream() -> Iterator[FilteredThread | Rejection]:
        if jobs <= 1:
            for thread in threads:
                yield filter_thread(thread, language_check)
        else:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=jobs) as pool:
                yield from pool.map(
                    lambda t: filter_thread(t, language_check), threads
                )

    for filtered in filtered_stream():
        report.threads_read += 1
        if isinstance(filtered, Rejection):
            report.note_thread_rejection(filtered.reason)
            continue
        for chain in sample_nested_chains(filtered):
            report.chains_enumerated += 1
            mapped = map_links(chain, resolver)
            if isinstance(mapped, Rejection):
                report.note_conversation_rejection(mapped.reason)
                continue
            report.conversations_kept += 1
            yield DatedConversation(
                conversation=mapped, created_at=chain.created_at, score=chain.score
            )
