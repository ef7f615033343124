"""Multi-source fusion: attentive pooling over review encodings plus
word-level fusion by averaging, and the hinge ranking loss that pulls the
pooled encoding toward the gold summary encoding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, TensorError
from .condense import encode_review
from .data import ExtendedVocab, ReviewCluster, Vocabulary
from .optim import ParameterSet

NUM_NEGATIVES = 5


@dataclass
class ClusterEncodings:
    """Frozen per-cluster output of the review encoder.

    Arrays rather than tape tensors: the encoder does not train during the
    generation stage, so these are constants to the decoder's tape.
    """

    review_vectors: np.ndarray          # (N, encoding_dim)
    word_encodings: list[np.ndarray]    # per review: (M_i, encoding_dim)
    word_ids: list[list[int]]           # extended-vocabulary ids, aligned
    ext: ExtendedVocab

    @property
    def n_reviews(self) -> int:
        return self.review_vectors.shape[0]


@dataclass
class FusedCluster:
    """One cluster pooled and word-fused, ready for decoding."""

    d_prime: Tensor                 # (encoding_dim,)
    weights: Tensor                 # (N,) pooling weights, sum 1
    word_table: Tensor              # (V, encoding_dim) fused word encodings
    unique_word_ids: list[int]      # length V, extended-vocabulary ids
    word_counts: np.ndarray         # (V,) occurrences per fused word
    ext: ExtendedVocab


def encode_cluster(cluster: ReviewCluster, vocab: Vocabulary,
                   condense_params: ParameterSet) -> ClusterEncodings:
    """Encode every review once, in eval mode, off any tape."""
    ext = ExtendedVocab(vocab, (t for r in cluster.reviews for t in r.tokens))
    vectors, words, ids = [], [], []
    for review in cluster.reviews:
        base_ids = vocab.encode(review.tokens)
        enc = encode_review(base_ids, condense_params, mode="eval")
        vectors.append(enc.vector.data)
        words.append(np.stack([w.data for w in enc.word_encodings]))
        ids.append(ext.encode(review.tokens))
    return ClusterEncodings(
        review_vectors=np.stack(vectors), word_encodings=words,
        word_ids=ids, ext=ext)


def mean_query(review_vectors: np.ndarray) -> np.ndarray:
    """The default pooling query: the plain average of review encodings."""
    return review_vectors.mean(axis=0)


def pool_reviews(review_vectors, query, pooling_matrix) -> tuple[Tensor, Tensor]:
    """Attentive pooling: softmax over bilinear scores against the query.

    Scores are d_i · (W q); the pooled encoding is the weight-blended sum
    of the review encodings.  Differentiable in the pooling matrix.
    """
    vectors = ad.as_tensor(review_vectors)
    query = ad.as_tensor(query)
    matrix = pooling_matrix if isinstance(pooling_matrix, Tensor) else ad.as_tensor(pooling_matrix)
    if vectors.data.ndim != 2:
        raise TensorError(f"review encodings must be (N, dim), got {vectors.shape}")
    dim = vectors.shape[1]
    if query.shape != (dim,) or matrix.shape != (dim, dim):
        raise TensorError(
            f"pooling shapes disagree: encodings {vectors.shape}, "
            f"query {query.shape}, matrix {matrix.shape}")
    scores = ad.matmul(vectors, ad.matmul(matrix, query))
    weights = ad.softmax(scores)
    pooled = ad.matmul(weights, vectors)
    return pooled, weights


def fuse_words(word_encodings: list[np.ndarray],
               word_ids: list[list[int]]) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Average all encodings of the same word across the cluster.

    Returns the distinct word ids in first-appearance order, the fused
    (V, dim) table, and per-word occurrence counts.
    """
    if len(word_encodings) != len(word_ids):
        raise TensorError("word encodings and id lists are misaligned")
    order: list[int] = []
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    for matrix, ids in zip(word_encodings, word_ids):
        if matrix.shape[0] != len(ids):
            raise TensorError(
                f"review has {matrix.shape[0]} encodings for {len(ids)} ids")
        for row, word in zip(matrix, ids):
            if word not in sums:
                order.append(word)
                sums[word] = row.copy()
                counts[word] = 1
            else:
                sums[word] += row
                counts[word] += 1
    table = np.stack([sums[w] / counts[w] for w in order]) if order else np.zeros((0, 0))
    return order, table, np.array([counts[w] for w in order])


def build_fused_cluster(encodings: ClusterEncodings, pooling_matrix,
                        query: np.ndarray | None = None) -> FusedCluster:
    """Pool and word-fuse one cluster; the query defaults to the mean."""
    if query is None:
        query = mean_query(encodings.review_vectors)
    pooled, weights = pool_reviews(encodings.review_vectors, query, pooling_matrix)
    unique_ids, table, counts = fuse_words(encodings.word_encodings, encodings.word_ids)
    return FusedCluster(
        d_prime=pooled, weights=weights, word_table=Tensor(table),
        unique_word_ids=unique_ids, word_counts=counts, ext=encodings.ext)


def fusion_loss(d_prime: Tensor, summary_encoding, negatives) -> Tensor:
    """Hinge ranking loss against the gold summary encoding.

    Each of the five negative encodings contributes
    max(0, 1 − d'·z + d'·n); the loss is their sum.
    """
    if len(negatives) != NUM_NEGATIVES:
        raise TensorError(f"expected {NUM_NEGATIVES} negatives, got {len(negatives)}")
    d_prime = ad.as_tensor(d_prime)
    gold_score = ad.matmul(d_prime, ad.as_tensor(summary_encoding))
    neg_gold = ad.mul(gold_score, Tensor(-1.0))
    one = Tensor(1.0)
    total = None
    for negative in negatives:
        neg_score = ad.matmul(d_prime, ad.as_tensor(negative))
        hinge = ad.relu(ad.add(ad.add(one, neg_gold), neg_score))
        total = hinge if total is None else ad.add(total, hinge)
    return total


def sample_negatives(summary_encodings: np.ndarray, cluster_index: int,
                     rng: np.random.Generator) -> list[np.ndarray]:
    """Draw five gold-summary encodings from other clusters, uniformly."""
    others = [i for i in range(summary_encodings.shape[0]) if i != cluster_index]
    if not others:
        raise TensorError("negative sampling needs at least two clusters")
    replace = len(others) < NUM_NEGATIVES
    picked = rng.choice(others, size=NUM_NEGATIVES, replace=replace)
    return [summary_encodings[i] for i in picked]
