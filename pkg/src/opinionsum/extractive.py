"""Centroid-based review selection for the salience pathway and the
standalone extractive baseline: embed every review, take the mean as the
centroid, keep the k nearest reviews.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .autodiff import TensorError
from .condense import encode_review
from .data import Review, Vocabulary
from .optim import ParameterSet

DEFAULT_K = 5


class ReviewEmbedder(Protocol):
    def __call__(self, review: Review) -> np.ndarray: ...


class CondenseEmbedder:
    """Mean of the review's word-level encodings from the trained encoder."""

    def __init__(self, vocab: Vocabulary, condense_params: ParameterSet):
        self.vocab = vocab
        self.params = condense_params

    def __call__(self, review: Review) -> np.ndarray:
        if not review.tokens:
            raise TensorError("cannot embed an empty review")
        ids = self.vocab.encode(review.tokens)
        enc = encode_review(ids, self.params, mode="eval")
        return np.mean([w.data for w in enc.word_encodings], axis=0)


@dataclass(frozen=True)
class CentroidSelection:
    centroid: np.ndarray
    indices: tuple[int, ...]      # k selected reviews, ascending distance
    distances: np.ndarray         # all N distances to the centroid


def select_top_k(reviews: Sequence[Review], k: int,
                 embedder: ReviewEmbedder, metric: str = "euclidean") -> CentroidSelection:
    """The k reviews nearest the embedding centroid, ties to the lowest index."""
    n = len(reviews)
    if not 1 <= k <= n:
        raise TensorError(f"k={k} outside [1, {n}]")
    embeddings = np.stack([embedder(r) for r in reviews])
    centroid = embeddings.mean(axis=0)
    if metric == "euclidean":
        distances = np.linalg.norm(embeddings - centroid, axis=1)
    elif metric == "cosine":
        norms = np.linalg.norm(embeddings, axis=1) * max(np.linalg.norm(centroid), 1e-30)
        distances = 1.0 - (embeddings @ centroid) / np.maximum(norms, 1e-30)
    else:
        raise TensorError(f"unknown distance metric {metric!r}")
    # stable ascending sort: equal distances keep their original order
    ranked = np.argsort(distances, kind="stable")
    return CentroidSelection(centroid=centroid,
                             indices=tuple(int(i) for i in ranked[:k]),
                             distances=distances)
