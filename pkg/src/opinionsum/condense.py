"""The review autoencoder: a BiLSTM encoder and an LSTM reconstructor.

Encoding a review yields one summary vector (forward-final and
backward-initial states concatenated) plus per-token encodings that the
fusion stage averages word-by-word.  Training reconstructs each review
from its own encoding under a maximum-likelihood objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, TensorError, backward
from .data import BOS_ID, EOS_ID, Corpus, Vocabulary
from .optim import OptimizerState, ParameterSet, adam_step, init_rng
from .recurrent import init_lstm_params, run_bilstm, lstm_step

logger = logging.getLogger(__name__)

EMBEDDING_INIT_RANGE = 0.1
DROPOUT_RATE = 0.5


@dataclass(frozen=True)
class CondenseConfig:
    vocab_size: int
    embedding_dim: int = 128
    hidden_dim: int = 128          # per direction; concatenated vectors are twice this
    dropout_rate: float = DROPOUT_RATE

    @property
    def encoding_dim(self) -> int:
        return 2 * self.hidden_dim


@dataclass
class ReviewEncoding:
    """One review's summary vector and its per-token encodings."""

    vector: Tensor                 # encoding_dim
    word_encodings: list[Tensor]   # one encoding_dim vector per token
    token_ids: list[int]           # base-vocabulary ids the encoder consumed


def init_condense_params(config: CondenseConfig, seed: int) -> ParameterSet:
    rng = init_rng(seed)
    params = ParameterSet()
    params.add("condense.embeddings",
               rng.uniform(-EMBEDDING_INIT_RANGE, EMBEDDING_INIT_RANGE,
                           size=(config.vocab_size, config.embedding_dim)))
    init_lstm_params(params, "condense.fwd", config.embedding_dim, config.hidden_dim, rng)
    init_lstm_params(params, "condense.bwd", config.embedding_dim, config.hidden_dim, rng)
    init_lstm_params(params, "condense.dec", config.embedding_dim, config.encoding_dim, rng)
    params.add("condense.out.W",
               np.asarray(np.zeros((config.encoding_dim, config.vocab_size))))
    params.add("condense.out.b", np.zeros(config.vocab_size))
    return params


def config_from_params(params: ParameterSet) -> CondenseConfig:
    vocab_size, embedding_dim = params["condense.embeddings"].shape
    hidden_dim = params["condense.fwd.b_i"].shape[0]
    return CondenseConfig(vocab_size=vocab_size, embedding_dim=embedding_dim,
                          hidden_dim=hidden_dim)


def _embed_tokens(params: ParameterSet, token_ids: list[int], mode: str,
                  rate: float) -> list[Tensor]:
    rows = ad.embedding_lookup(params["condense.embeddings"], token_ids)
    rows = ad.dropout(rows, rate, mode)
    return [ad.embedding_lookup(rows, i) for i in range(len(token_ids))]


def encode_review(token_ids: list[int], params: ParameterSet,
                  mode: str = "eval",
                  dropout_rate: float = DROPOUT_RATE) -> ReviewEncoding:
    """Encode a non-empty id sequence into summary and per-token vectors."""
    if not token_ids:
        raise TensorError("cannot encode an empty review")
    hidden_dim = params["condense.fwd.b_i"].shape[0]
    inputs = _embed_tokens(params, list(token_ids), mode, dropout_rate)
    per_token, encoding = run_bilstm(params, "condense.fwd", "condense.bwd",
                                     inputs, hidden_dim)
    return ReviewEncoding(vector=encoding, word_encodings=per_token,
                          token_ids=list(token_ids))


def reconstruction_distributions(encoding: ReviewEncoding, target_ids: list[int],
                                 params: ParameterSet, mode: str = "eval",
                                 dropout_rate: float = DROPOUT_RATE) -> list[Tensor]:
    """Teacher-forced per-step distributions over the base vocabulary.

    The reconstructor starts from the review encoding and sees the previous
    target token at each step (sequence-start before the first).
    """
    if not target_ids:
        raise TensorError("reconstruction needs a non-empty target")
    h = encoding.vector
    c = Tensor(np.zeros(h.shape[0]))
    distributions = []
    prev_ids = [BOS_ID] + list(target_ids[:-1])
    for prev in prev_ids:
        x = ad.embedding_lookup(params["condense.embeddings"], prev)
        h, c = lstm_step(params, "condense.dec", x, h, c)
        projected = ad.dropout(h, dropout_rate, mode)
        logits = ad.add(ad.matmul(projected, params["condense.out.W"]),
                        params["condense.out.b"])
        distributions.append(ad.softmax(logits))
    return distributions


def condense_loss(distributions: list[Tensor], target_ids: list[int]) -> Tensor:
    """Sum of negative log-probabilities of the target tokens."""
    if len(distributions) != len(target_ids):
        raise TensorError(
            f"{len(distributions)} distributions for {len(target_ids)} targets")
    total = ad.cross_entropy(distributions[0], target_ids[0])
    for dist, target in zip(distributions[1:], target_ids[1:]):
        total = ad.add(total, ad.cross_entropy(dist, target))
    return total


def review_loss(token_ids: list[int], params: ParameterSet, mode: str,
                dropout_rate: float = DROPOUT_RATE) -> Tensor:
    """Reconstruction loss of one review, sequence-end included."""
    encoding = encode_review(token_ids, params, mode, dropout_rate)
    target = list(token_ids) + [EOS_ID]
    dists = reconstruction_distributions(encoding, target, params, mode, dropout_rate)
    return condense_loss(dists, target)


def training_instances(corpus: Corpus, vocab: Vocabulary) -> list[list[int]]:
    """Every review and every gold summary as one id sequence each."""
    instances = []
    for cluster in corpus:
        for review in cluster.reviews:
            instances.append(vocab.encode(review.tokens))
        if cluster.gold_summary is not None:
            instances.append(vocab.encode(cluster.gold_summary.tokens))
    return instances


def mean_corpus_loss(instances: list[list[int]], params: ParameterSet) -> float:
    total = 0.0
    for ids in instances:
        total += float(review_loss(ids, params, mode="eval").data)
    return total / len(instances)


@dataclass
class TrainLog:
    epoch_losses: list[float] = field(default_factory=list)
    dev_losses: list[float] = field(default_factory=list)
    stopped_early: bool = False


def train_condense(
    corpus: Corpus,
    vocab: Vocabulary,
    config: CondenseConfig,
    epochs: int,
    seed: int,
    dev: Corpus | None = None,
    batch_size: int = 8,
    lr: float = 1e-3,
    dropout_rate: float | None = None,
    patience: int = 3,
) -> tuple[ParameterSet, TrainLog]:
    """Maximum-likelihood training of the autoencoder, one review per instance."""
    params = init_condense_params(config, seed)
    state = OptimizerState()
    rng = init_rng(seed + 1)
    rate = config.dropout_rate if dropout_rate is None else dropout_rate
    instances = training_instances(corpus, vocab)
    dev_instances = training_instances(dev, vocab) if dev is not None else None
    log = TrainLog()
    best_dev = np.inf
    best_snapshot: dict[str, np.ndarray] | None = None
    stale = 0

    for epoch in range(epochs):
        order = rng.permutation(len(instances))
        epoch_total = 0.0
        for start in range(0, len(order), batch_size):
            batch = [instances[i] for i in order[start:start + batch_size]]
            with Tape(rng=rng) as tape:
                total = review_loss(batch[0], params, "train", rate)
                for ids in batch[1:]:
                    total = ad.add(total, review_loss(ids, params, "train", rate))
                loss = ad.mul(total, Tensor(1.0 / len(batch)))
            grads = backward(tape, loss)
            adam_step(params, grads, state, lr=lr)
            epoch_total += float(total.data)
        mean_loss = epoch_total / len(instances)
        log.epoch_losses.append(mean_loss)

        if dev_instances is None:
            logger.info("condense epoch %d: train loss %.4f", epoch, mean_loss)
            continue
        dev_loss = mean_corpus_loss(dev_instances, params)
        log.dev_losses.append(dev_loss)
        logger.info("condense epoch %d: train loss %.4f, dev loss %.4f",
                    epoch, mean_loss, dev_loss)
        if dev_loss < best_dev:
            best_dev = dev_loss
            best_snapshot = {n: t.data.copy() for n, t in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                log.stopped_early = True
                logger.info("condense early stop at epoch %d (patience %d)",
                            epoch, patience)
                break

    if best_snapshot is not None:
        for name, values in best_snapshot.items():
            params[name].assign(values)
    return params, log
