"""Corpus loading, tokenization, vocabulary, title masking, toy corpora.

Corpus files are UTF-8 JSON lines, one review cluster per line::

    {"id": "...", "reviews": ["...", ...], "summary": "...", "title": "..."}

``summary`` and ``title`` are optional.  Reviews are tokenized and
title-masked at load time; token ids only materialize when a cluster is
encoded against a vocabulary, so the same corpus can serve vocabulary
construction and training.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PAD_TOKEN = "_pad_"
UNK_TOKEN = "_unk_"
BOS_TOKEN = "_bos_"
EOS_TOKEN = "_eos_"
TITLE_TOKEN = "_title_"
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN, TITLE_TOKEN)
PAD_ID, UNK_ID, BOS_ID, EOS_ID, TITLE_ID = range(5)

DEFAULT_MIN_FREQUENCY = 2
MAX_REVIEW_TOKENS = 60
MAX_SUMMARY_TOKENS = 40

# Words are runs of lowercase letters, digits, underscores and apostrophes;
# any other non-space character is its own token.  Reserved token surfaces
# like "_title_" therefore tokenize to themselves.
_TOKEN_RE = re.compile(r"[a-z0-9_']+|[^a-z0-9_'\s]")


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid generator arguments."""


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


def mask_title(tokens: Sequence[str], title: str) -> list[str]:
    """Replace each maximal title occurrence with the generic title token.

    Matching is greedy left to right, so overlapping occurrences consume
    the earliest match first.
    """
    needle = tokenize(title)
    if not needle:
        return list(tokens)
    out: list[str] = []
    i, n = 0, len(needle)
    while i < len(tokens):
        if list(tokens[i:i + n]) == needle:
            out.append(TITLE_TOKEN)
            i += n
        else:
            out.append(tokens[i])
            i += 1
    return out


def unmask_title(tokens: Sequence[str], title: str | None) -> list[str]:
    """Substitute the original title back for the generic token."""
    if not title:
        return list(tokens)
    replacement = tokenize(title)
    out: list[str] = []
    for token in tokens:
        if token == TITLE_TOKEN:
            out.extend(replacement)
        else:
            out.append(token)
    return out


@dataclass(frozen=True)
class Review:
    """One tokenized review (or summary); ids are resolved via a Vocabulary."""

    tokens: tuple[str, ...]
    raw_text: str

    def __post_init__(self):
        if not self.tokens:
            raise CorpusError("a review must contain at least one token")

    @staticmethod
    def from_text(text: str, title: str | None = None, max_tokens: int = MAX_REVIEW_TOKENS) -> "Review":
        tokens = tokenize(text)
        if title:
            tokens = mask_title(tokens, title)
        return Review(tokens=tuple(tokens[:max_tokens]), raw_text=text)


@dataclass(frozen=True)
class ReviewCluster:
    cluster_id: str
    reviews: tuple[Review, ...]
    gold_summary: Review | None = None
    title: str | None = None

    def __post_init__(self):
        if not self.reviews:
            raise CorpusError(f"cluster {self.cluster_id!r} has no reviews")


@dataclass(frozen=True)
class CorpusStats:
    clusters: int
    reviews_per_cluster: float
    tokens_per_review: float
    tokens_per_summary: float


@dataclass(frozen=True)
class Corpus:
    clusters: tuple[ReviewCluster, ...]
    split: str = "train"
    stats: CorpusStats = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "stats", compute_stats(self.clusters))

    def __len__(self) -> int:
        return len(self.clusters)

    def __iter__(self):
        return iter(self.clusters)


def compute_stats(clusters: Sequence[ReviewCluster]) -> CorpusStats:
    n_reviews = sum(len(c.reviews) for c in clusters)
    n_tokens = sum(len(r.tokens) for c in clusters for r in c.reviews)
    summaries = [c.gold_summary for c in clusters if c.gold_summary is not None]
    return CorpusStats(
        clusters=len(clusters),
        reviews_per_cluster=n_reviews / len(clusters) if clusters else 0.0,
        tokens_per_review=n_tokens / n_reviews if n_reviews else 0.0,
        tokens_per_summary=(sum(len(s.tokens) for s in summaries) / len(summaries)
                            if summaries else 0.0),
    )


class Vocabulary:
    """Bijective token -> id map with five reserved leading ids."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._token_to_id: dict[str, int] = {t: i for i, t in enumerate(RESERVED_TOKENS)}
        self._id_to_token: list[str] = list(RESERVED_TOKENS)
        for token in tokens:
            self.add(token)

    def add(self, token: str) -> int:
        existing = self._token_to_id.get(token)
        if existing is not None:
            return existing
        idx = len(self._id_to_token)
        self._token_to_id[token] = idx
        self._id_to_token.append(token)
        return idx

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        if 0 <= idx < len(self._id_to_token):
            return self._id_to_token[idx]
        raise CorpusError(f"token id {idx} outside vocabulary of size {len(self)}")

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self._token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.token_of(i) for i in ids]

    def save(self, path) -> None:
        """One non-reserved token per line; line number = id - 5."""
        with open(path, "w", encoding="utf-8") as fh:
            for token in self._id_to_token[len(RESERVED_TOKENS):]:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        vocab = cls()
        for lineno, token in enumerate(tokens, start=1):
            if not token:
                raise CorpusError(f"{path}: empty token at line {lineno}")
            if token in vocab:
                raise CorpusError(f"{path}: duplicate token {token!r} at line {lineno}")
            vocab.add(token)
        return vocab


def build_vocab(corpus: Corpus, min_frequency: int = DEFAULT_MIN_FREQUENCY) -> Vocabulary:
    """Keep tokens seen at least ``min_frequency`` times across all text."""
    if min_frequency < 1:
        raise CorpusError(f"min_frequency must be >= 1, got {min_frequency}")
    counts: dict[str, int] = {}
    for cluster in corpus:
        texts = [r.tokens for r in cluster.reviews]
        if cluster.gold_summary is not None:
            texts.append(cluster.gold_summary.tokens)
        for tokens in texts:
            for token in tokens:
                counts[token] = counts.get(token, 0) + 1
    kept = sorted(t for t, c in counts.items() if c >= min_frequency and t not in RESERVED_TOKENS)
    vocab = Vocabulary(kept)
    logger.info("vocabulary: kept %d of %d distinct tokens (min_frequency=%d)",
                len(kept), len(counts), min_frequency)
    return vocab


class ExtendedVocab:
    """Base vocabulary plus per-cluster copy ids for out-of-vocabulary words.

    Words a decoder may copy from the source reviews get ids above the base
    size; those ids carry zero generation probability and exist only so the
    copy distribution has somewhere to put its mass.
    """

    def __init__(self, vocab: Vocabulary, source_tokens: Iterable[str]):
        self.base = vocab
        self._extra_to_id: dict[str, int] = {}
        self._extras: list[str] = []
        for token in source_tokens:
            if token not in vocab and token not in self._extra_to_id:
                self._extra_to_id[token] = len(vocab) + len(self._extras)
                self._extras.append(token)

    @property
    def base_size(self) -> int:
        return len(self.base)

    @property
    def size(self) -> int:
        return len(self.base) + len(self._extras)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        out = []
        for token in tokens:
            idx = self._extra_to_id.get(token)
            out.append(self.base.id_of(token) if idx is None else idx)
        return out

    def token_of(self, idx: int) -> str:
        if idx < len(self.base):
            return self.base.token_of(idx)
        if idx < self.size:
            return self._extras[idx - len(self.base)]
        raise CorpusError(f"token id {idx} outside extended vocabulary of size {self.size}")


def load_corpus(path, split: str = "train") -> Corpus:
    """Parse a JSON-lines corpus file; errors carry the offending line number."""
    clusters: list[ReviewCluster] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
            if not isinstance(record, dict):
                raise CorpusError(f"{path}:{lineno}: expected an object per line")
            reviews_raw = record.get("reviews")
            if not isinstance(reviews_raw, list) or not reviews_raw:
                raise CorpusError(f"{path}:{lineno}: missing or empty 'reviews' field")
            title = record.get("title")
            try:
                reviews = tuple(Review.from_text(str(t), title) for t in reviews_raw)
                summary_text = record.get("summary")
                summary = None
                if summary_text is not None:
                    summary = Review.from_text(str(summary_text), title,
                                               max_tokens=MAX_SUMMARY_TOKENS)
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
            clusters.append(ReviewCluster(
                cluster_id=str(record.get("id", f"line-{lineno}")),
                reviews=reviews,
                gold_summary=summary,
                title=title,
            ))
    if not clusters:
        raise CorpusError(f"{path}: corpus contains no clusters")
    corpus = Corpus(clusters=tuple(clusters), split=split)
    s = corpus.stats
    logger.info("loaded %s: %d clusters, %.1f reviews/cluster, %.1f tokens/review",
                path, s.clusters, s.reviews_per_cluster, s.tokens_per_review)
    return corpus


def save_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cluster in corpus:
            record: dict = {
                "id": cluster.cluster_id,
                "reviews": [r.raw_text for r in cluster.reviews],
            }
            if cluster.gold_summary is not None:
                record["summary"] = cluster.gold_summary.raw_text
            if cluster.title is not None:
                record["title"] = cluster.title
            fh.write(json.dumps(record) + "\n")


# ---------------------------------------------------------------------------
# synthetic corpora

_FILLER_WORDS = ("i", "thought", "the", "was", "really", "overall", "quite",
                 "a", "bit", "honestly", "felt", "very")


def generate_toy_corpus(
    clusters: int,
    reviews_per_cluster: int,
    aspects: Mapping[str, Sequence[str]],
    sentiments: Sequence[Sequence[str]],
    seed: int,
    majority_count: int | None = None,
    split: str = "train",
) -> Corpus:
    """Templated clusters where aspect/sentiment markers are controllable.

    Every review mentions exactly one aspect marker and one sentiment
    marker; the gold summary names the cluster's majority aspect and its
    dominant sentiment.  Identical seeds produce identical corpora.
    """
    if len(aspects) < 2:
        raise CorpusError("need at least two aspects")
    if len(sentiments) != 2:
        raise CorpusError("need exactly two sentiment marker sets")
    marker_sets = [set(v) for v in aspects.values()] + [set(s) for s in sentiments]
    if any(not s for s in marker_sets):
        raise CorpusError("marker sets must be non-empty")
    for i, a in enumerate(marker_sets):
        for b in marker_sets[i + 1:]:
            if a & b:
                raise CorpusError(f"marker vocabularies overlap: {sorted(a & b)}")
    template_words = set(_FILLER_WORDS)
    union = set().union(*marker_sets)
    if union & template_words:
        raise CorpusError(f"markers collide with template words: {sorted(union & template_words)}")

    aspect_names = list(aspects)
    rng = np.random.default_rng(seed)
    if majority_count is None:
        majority_count = max(1, (2 * reviews_per_cluster + 2) // 3)
    majority_count = min(majority_count, reviews_per_cluster)

    def sentence(aspect: str, mood: int) -> tuple[str, str]:
        marker = str(rng.choice(sorted(aspects[aspect])))
        feeling = str(rng.choice(sorted(sentiments[mood])))
        forms = (
            f"the {marker} was {feeling}",
            f"i thought the {marker} felt {feeling}",
            f"honestly the {marker} was quite {feeling}",
            f"overall a {feeling} {marker}",
        )
        return forms[int(rng.integers(len(forms)))], marker

    built: list[ReviewCluster] = []
    for ci in range(clusters):
        majority = aspect_names[ci % len(aspect_names)]
        others = [a for a in aspect_names if a != majority]
        mood = int(rng.integers(2))
        plan = [majority] * majority_count
        for j in range(reviews_per_cluster - majority_count):
            plan.append(others[j % len(others)])
        reviews = []
        for aspect in plan:
            text, _ = sentence(aspect, mood)
            reviews.append(Review.from_text(text))
        summary_text, _ = sentence(majority, mood)
        built.append(ReviewCluster(
            cluster_id=f"toy-{ci:03d}",
            reviews=tuple(reviews),
            gold_summary=Review.from_text(summary_text, max_tokens=MAX_SUMMARY_TOKENS),
        ))
    return Corpus(clusters=tuple(built), split=split)
