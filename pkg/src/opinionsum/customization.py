"""Zero-shot customization: summaries steered toward a user need.

A need is represented by background reviews; their mean encoding replaces
the default pooling query, shifting the attentive-pooling weights toward
reviews resembling the background.  No parameter changes anywhere.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .condense import encode_review
from .data import Corpus, CorpusError, Review, ReviewCluster, Vocabulary
from .optim import ParameterSet
from .pipeline import ModelBundle, SummaryResult, summarize_cluster

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BackgroundSet:
    """Reviews conveying one user need, keyed by its label."""

    label: str
    reviews: tuple[Review, ...]

    def __post_init__(self):
        if not self.reviews:
            raise CorpusError(f"background set {self.label!r} has no reviews")

    @staticmethod
    def from_corpus(corpus: Corpus, label: str) -> "BackgroundSet":
        """Collect the reviews of every cluster whose id equals ``label``."""
        reviews: list[Review] = []
        for cluster in corpus:
            if cluster.cluster_id == label:
                reviews.extend(cluster.reviews)
        if not reviews:
            available = ", ".join(sorted({c.cluster_id for c in corpus}))
            raise CorpusError(
                f"no background cluster labeled {label!r}; available: {available}")
        return BackgroundSet(label=label, reviews=tuple(reviews))


def build_query(background: BackgroundSet, vocab: Vocabulary,
                condense_params: ParameterSet) -> np.ndarray:
    """Mean review encoding of the background set.

    Computed exactly like the default query over a cluster, so a background
    equal to the cluster's own reviews reproduces it bitwise.
    """
    vectors = [encode_review(vocab.encode(r.tokens), condense_params).vector.data
               for r in background.reviews]
    return np.stack(vectors).mean(axis=0)


def summarize_customized(
    cluster: ReviewCluster,
    background: BackgroundSet,
    bundle: ModelBundle,
    beam: int = 5,
    max_len: int = 40,
    k: int | None = None,
    use_extracts: bool = False,
) -> SummaryResult:
    """General-purpose summarization with the pooling query swapped.

    Extracts default to off: the salience state tracks the whole cluster
    and drowns out the need signal.  A model trained with extracts needs
    ``use_extracts=True`` (its decoder state includes the salience half).
    """
    query = build_query(background, bundle.vocab, bundle.condense)
    logger.info("customizing cluster %s toward %r (%d background reviews)",
                cluster.cluster_id, background.label, len(background.reviews))
    return summarize_cluster(cluster, bundle, beam=beam, max_len=max_len,
                             k=k, use_extracts=use_extracts, query=query)
