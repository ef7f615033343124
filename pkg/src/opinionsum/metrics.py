"""Summary quality metrics: n-gram overlap, longest common subsequence,
and skip-bigram recall, plus corpus-level aggregation.

All functions take pre-tokenized sequences.  No stemming or stopword
removal happens here; scores are self-consistent rather than identical to
any particular external toolkit.  The hot paths stay allocation-light
because the test suite sweeps them over millions of sequence pairs.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from itertools import chain
from typing import Hashable, NamedTuple, Sequence

from .data import Corpus, tokenize, unmask_title

logger = logging.getLogger(__name__)

SU4_MAX_SKIP = 4

Tokens = Sequence[Hashable]


class Score(NamedTuple):
    precision: float
    recall: float
    f1: float


ZERO_SCORE = Score(0.0, 0.0, 0.0)


def _f1(precision: float, recall: float) -> float:
    total = precision + recall
    return 2 * precision * recall / total if total else 0.0


def _clipped_matches(candidate_counts: dict, reference_counts: dict) -> int:
    if len(candidate_counts) > len(reference_counts):
        candidate_counts, reference_counts = reference_counts, candidate_counts
    match = 0
    get = reference_counts.get
    for gram, count in candidate_counts.items():
        other = get(gram)
        if other:
            match += count if count < other else other
    return match


@lru_cache(maxsize=1 << 16)
def _ngram_counts(tokens: tuple, n: int) -> dict:
    if n == 1:
        return Counter(tokens)
    if n == 2:
        return Counter(zip(tokens, tokens[1:]))
    return Counter(zip(*(tokens[i:] for i in range(n))))


def _warn_empty(reference: Tokens) -> bool:
    if len(reference) == 0:
        logger.warning("empty reference sequence; returning zero scores")
        return True
    return False


def rouge_n(candidate: Tokens, reference: Tokens, n: int) -> Score:
    """Clipped n-gram precision/recall/F1 (n = 1 or 2 in practice)."""
    if _warn_empty(reference):
        return ZERO_SCORE
    match = _clipped_matches(_ngram_counts(tuple(candidate), n),
                             _ngram_counts(tuple(reference), n))
    n_candidate = len(candidate) - n + 1
    n_reference = len(reference) - n + 1
    precision = match / n_candidate if n_candidate > 0 else 0.0
    recall = match / n_reference if n_reference > 0 else 0.0
    return Score(precision, recall, _f1(precision, recall))


@lru_cache(maxsize=1 << 16)
def _position_masks(tokens: tuple) -> dict:
    masks: dict = {}
    for j, y in enumerate(tokens):
        masks[y] = masks.get(y, 0) | (1 << j)
    return masks


def _lcs_length(a: tuple, b: tuple) -> int:
    """Bit-parallel longest common subsequence (Allison-Dix).

    One big-int word tracks the dynamic-program row over the shorter
    sequence: zero bits mark matched prefix cells, so the length is the
    zero-bit count at the end.
    """
    if len(a) < len(b):
        a, b = b, a
    m = len(b)
    if not m:
        return 0
    window = (1 << m) - 1
    row = window
    get = _position_masks(b).get
    for x in a:
        hits = row & get(x, 0)
        row = ((row + hits) | (row - hits)) & window
    return m - row.bit_count()


def rouge_l(candidate: Tokens, reference: Tokens) -> Score:
    """Longest-common-subsequence precision/recall/F1."""
    if _warn_empty(reference):
        return ZERO_SCORE
    lcs = _lcs_length(tuple(candidate), tuple(reference))
    precision = lcs / len(candidate) if candidate else 0.0
    recall = lcs / len(reference)
    return Score(precision, recall, _f1(precision, recall))


@lru_cache(maxsize=1 << 16)
def _su_counts(tokens: tuple, max_skip: int) -> dict:
    """Unigrams plus in-order pairs at positional distance <= max_skip."""
    parts = [tokens]
    for skip in range(1, min(max_skip + 1, len(tokens))):
        parts.append(zip(tokens, tokens[skip:]))
    return Counter(chain.from_iterable(parts))


def rouge_su4(candidate: Tokens, reference: Tokens) -> Score:
    """Skip-bigram (distance <= 4) plus unigram overlap; recall is the
    reported figure, precision and F1 ride along."""
    if _warn_empty(reference):
        return ZERO_SCORE
    cand = _su_counts(tuple(candidate), SU4_MAX_SKIP)
    ref = _su_counts(tuple(reference), SU4_MAX_SKIP)
    match = _clipped_matches(cand, ref)
    n_candidate = sum(cand.values())
    n_reference = sum(ref.values())
    precision = match / n_candidate if n_candidate else 0.0
    recall = match / n_reference if n_reference else 0.0
    return Score(precision, recall, _f1(precision, recall))


METRIC_KEYS = ("rouge1_f1", "rouge2_f1", "rougeL_f1", "rouge_su4_recall")


@dataclass(frozen=True)
class MetricReport:
    per_instance: tuple[dict, ...]
    means: dict

    def lines(self) -> list[str]:
        return [f"{key} {self.means[key]:.4f}" for key in METRIC_KEYS]


def score_pair(candidate_tokens: Tokens, reference_tokens: Tokens) -> dict:
    return {
        "rouge1_f1": rouge_n(candidate_tokens, reference_tokens, 1).f1,
        "rouge2_f1": rouge_n(candidate_tokens, reference_tokens, 2).f1,
        "rougeL_f1": rouge_l(candidate_tokens, reference_tokens).f1,
        "rouge_su4_recall": rouge_su4(candidate_tokens, reference_tokens).recall,
    }


def evaluate_corpus(predictions: Sequence[str], corpus: Corpus) -> MetricReport:
    """Score one prediction per gold-bearing cluster; means over instances.

    Title placeholders are unmasked on both sides before scoring.
    """
    gold_clusters = [c for c in corpus if c.gold_summary is not None]
    if len(predictions) != len(gold_clusters):
        raise ValueError(
            f"{len(predictions)} predictions for {len(gold_clusters)} "
            "clusters with gold summaries")
    per_instance = []
    for text, cluster in zip(predictions, gold_clusters):
        candidate = unmask_title(tokenize(text), cluster.title)
        reference = unmask_title(list(cluster.gold_summary.tokens), cluster.title)
        row = score_pair(candidate, reference)
        row["cluster_id"] = cluster.cluster_id
        per_instance.append(row)
    means = {key: sum(row[key] for row in per_instance) / len(per_instance)
             for key in METRIC_KEYS}
    return MetricReport(per_instance=tuple(per_instance), means=means)
