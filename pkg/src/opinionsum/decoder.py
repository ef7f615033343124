"""The summary generator: an attention-plus-copy LSTM decoder over a fused
cluster, optional salience state from extracted reviews, training losses,
and length-normalized beam search.

The final output distribution mixes a base-vocabulary softmax with the
attention weights scattered onto word ids (so out-of-vocabulary input
words remain emittable through their per-cluster extended ids).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, TensorError, backward
from .condense import encode_review
from .data import BOS_ID, EOS_ID, PAD_ID, UNK_ID, Corpus, Vocabulary, unmask_title
from .extractive import CondenseEmbedder, select_top_k
from .fusion import (
    ClusterEncodings,
    FusedCluster,
    build_fused_cluster,
    encode_cluster,
    fusion_loss,
    sample_negatives,
)
from .optim import OptimizerState, ParameterSet, adam_step, glorot, init_rng
from .recurrent import init_lstm_params, lstm_step, run_bilstm

logger = logging.getLogger(__name__)

POOLING_INIT_NOISE = 0.01
EMBEDDING_INIT_RANGE = 0.1
LOG_FLOOR = 1e-12
DEFAULT_BEAM = 5
DEFAULT_MAX_LEN = 40


@dataclass(frozen=True)
class AbstractConfig:
    vocab_size: int                 # base vocabulary
    encoding_dim: int = 256         # review-encoder output width; also the state width
    embedding_dim: int = 128
    attention_dim: int = 256
    use_extracts: bool = True
    dropout_rate: float = 0.5
    k: int = 5

    @property
    def query_dim(self) -> int:
        """Width of the state the output pathway sees."""
        return 2 * self.encoding_dim if self.use_extracts else self.encoding_dim


def init_abstract_params(config: AbstractConfig, seed: int) -> ParameterSet:
    rng = init_rng(seed)
    params = ParameterSet()
    params.add("abstract.embeddings",
               rng.uniform(-EMBEDDING_INIT_RANGE, EMBEDDING_INIT_RANGE,
                           size=(config.vocab_size, config.embedding_dim)))
    # Start pooling near the plain mean: identity scores plus a little noise.
    params.add("abstract.W_p",
               np.eye(config.encoding_dim)
               + rng.normal(scale=POOLING_INIT_NOISE,
                            size=(config.encoding_dim, config.encoding_dim)))
    init_lstm_params(params, "abstract.dec", config.embedding_dim, config.encoding_dim, rng)
    if config.use_extracts:
        if config.encoding_dim % 2:
            raise TensorError("salience encoder needs an even state width")
        half = config.encoding_dim // 2
        init_lstm_params(params, "abstract.sal_enc.fwd", config.embedding_dim, half, rng)
        init_lstm_params(params, "abstract.sal_enc.bwd", config.embedding_dim, half, rng)
        init_lstm_params(params, "abstract.sal", config.embedding_dim, config.encoding_dim, rng)
    params.add("abstract.att.W_h", glorot(rng, config.encoding_dim, config.attention_dim))
    params.add("abstract.att.W_s", glorot(rng, config.query_dim, config.attention_dim))
    params.add("abstract.att.b", np.zeros(config.attention_dim))
    params.add("abstract.att.v", glorot(rng, config.attention_dim, 1)[:, 0])
    params.add("abstract.out.W",
               glorot(rng, config.query_dim + config.encoding_dim, config.vocab_size))
    params.add("abstract.out.b", np.zeros(config.vocab_size))
    params.add("abstract.gate.v_s", glorot(rng, config.query_dim, 1)[:, 0])
    params.add("abstract.gate.v_c", glorot(rng, config.encoding_dim, 1)[:, 0])
    params.add("abstract.gate.v_y", glorot(rng, config.embedding_dim, 1)[:, 0])
    return params


def abstract_config_from_params(params: ParameterSet, k: int = 5,
                                dropout_rate: float = 0.5) -> AbstractConfig:
    vocab_size, embedding_dim = params["abstract.embeddings"].shape
    encoding_dim = params["abstract.W_p"].shape[0]
    attention_dim = params["abstract.att.b"].shape[0]
    return AbstractConfig(
        vocab_size=vocab_size, encoding_dim=encoding_dim,
        embedding_dim=embedding_dim, attention_dim=attention_dim,
        use_extracts="abstract.sal.b_i" in params,
        dropout_rate=dropout_rate, k=k)


@dataclass
class DecoderState:
    s: Tensor
    s_cell: Tensor
    r: Tensor | None = None
    r_cell: Tensor | None = None
    t: int = 0

    @property
    def uses_extracts(self) -> bool:
        return self.r is not None


@dataclass
class StepOutput:
    attention: Tensor       # (V,) over fused words
    context: Tensor         # (encoding_dim,)
    gate: Tensor            # scalar in (0, 1)
    distribution: Tensor    # (extended vocabulary size,)


def init_state(fused: FusedCluster, extract_ids: list[list[int]] | None,
               params: ParameterSet, mode: str = "eval",
               dropout_rate: float = 0.5) -> DecoderState:
    """Start decoding: main state is the pooled encoding; the salience state
    comes from a separate bidirectional pass over the concatenated extracts.
    """
    dim = fused.d_prime.shape[0]
    state = DecoderState(s=fused.d_prime, s_cell=Tensor(np.zeros(dim)))
    if "abstract.sal.b_i" in params:
        if not extract_ids or not any(extract_ids):
            raise TensorError("extracts enabled but no extracted reviews supplied")
        flat = [i for ids in extract_ids for i in ids]
        rows = ad.embedding_lookup(params["abstract.embeddings"],
                                   [i if i < params["abstract.embeddings"].shape[0] else UNK_ID
                                    for i in flat])
        rows = ad.dropout(rows, dropout_rate, mode)
        inputs = [ad.embedding_lookup(rows, i) for i in range(len(flat))]
        _, encoding = run_bilstm(params, "abstract.sal_enc.fwd", "abstract.sal_enc.bwd",
                                 inputs, dim // 2)
        state.r = encoding
        state.r_cell = Tensor(np.zeros(dim))
    return state


def decode_step(state: DecoderState, prev_token: int, fused: FusedCluster,
                params: ParameterSet, mode: str = "eval",
                dropout_rate: float = 0.5) -> tuple[StepOutput, DecoderState]:
    """One generation step; returns the mixed output distribution.

    Extended-vocabulary ids (copied out-of-vocabulary words) embed as the
    unknown token on input.
    """
    base_size = params["abstract.embeddings"].shape[0]
    ext_size = fused.ext.size if fused.ext is not None else base_size
    if not 0 <= prev_token < max(base_size, ext_size):
        raise TensorError(f"previous token id {prev_token} out of range")
    x = ad.embedding_lookup(params["abstract.embeddings"],
                            prev_token if prev_token < base_size else UNK_ID)

    s_new, s_cell_new = lstm_step(params, "abstract.dec", x, state.s, state.s_cell)
    if state.uses_extracts:
        r_new, r_cell_new = lstm_step(params, "abstract.sal", x, state.r, state.r_cell)
        query = ad.concat([s_new, r_new])
    else:
        r_new, r_cell_new = None, None
        query = s_new

    # attention over the fused word table
    pre = ad.tanh(ad.add(ad.add(ad.matmul(fused.word_table, params["abstract.att.W_h"]),
                                ad.matmul(query, params["abstract.att.W_s"])),
                         params["abstract.att.b"]))
    attention = ad.softmax(ad.matmul(pre, params["abstract.att.v"]))
    context = ad.matmul(attention, fused.word_table)

    # generation distribution over the base vocabulary
    projected = ad.concat([ad.dropout(query, dropout_rate, mode), context])
    gen = ad.softmax(ad.add(ad.matmul(projected, params["abstract.out.W"]),
                            params["abstract.out.b"]))

    # copy/generate gate from state, context, and the previous token
    gate = ad.sigmoid(ad.add(ad.add(ad.matmul(params["abstract.gate.v_s"], query),
                                    ad.matmul(params["abstract.gate.v_c"], context)),
                             ad.matmul(params["abstract.gate.v_y"], x)))

    copy = ad.scatter_sum(attention, fused.unique_word_ids, ext_size)
    weighted_gen = ad.mul(gen, gate)
    if ext_size > base_size:
        weighted_gen = ad.concat([weighted_gen, Tensor(np.zeros(ext_size - base_size))])
    one_minus_gate = ad.add(Tensor(1.0), ad.mul(gate, Tensor(-1.0)))
    distribution = ad.add(weighted_gen, ad.mul(copy, one_minus_gate))

    output = StepOutput(attention=attention, context=context, gate=gate,
                        distribution=distribution)
    next_state = DecoderState(s=s_new, s_cell=s_cell_new, r=r_new,
                              r_cell=r_cell_new, t=state.t + 1)
    return output, next_state


def generation_loss(fused: FusedCluster, target_ids: list[int],
                    extract_ids: list[list[int]] | None, params: ParameterSet,
                    mode: str = "eval", dropout_rate: float = 0.5) -> Tensor:
    """Teacher-forced negative log-likelihood of the target id sequence.

    Target ids live in the extended vocabulary, so gold words that only
    appear in the source reviews stay reachable through the copy path.
    """
    if not target_ids:
        raise TensorError("generation needs a non-empty target")
    state = init_state(fused, extract_ids, params, mode, dropout_rate)
    prev = BOS_ID
    total = None
    for target in target_ids:
        out, state = decode_step(state, prev, fused, params, mode, dropout_rate)
        step = ad.cross_entropy(out.distribution, target)
        total = step if total is None else ad.add(total, step)
        prev = target
    return total


def abstract_loss(fused: FusedCluster, target_ids: list[int], summary_encoding,
                  negatives, extract_ids: list[list[int]] | None,
                  params: ParameterSet, mode: str = "eval",
                  dropout_rate: float = 0.5) -> Tensor:
    """Generation loss plus the pooling hinge loss, unweighted."""
    generate = generation_loss(fused, target_ids, extract_ids, params, mode, dropout_rate)
    fuse = fusion_loss(fused.d_prime, summary_encoding, negatives)
    return ad.add(generate, fuse)


# ---------------------------------------------------------------------------
# beam search


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]         # emitted ids, sequence-end included when reached
    log_prob: float
    state: DecoderState | None
    finished: bool

    @property
    def score(self) -> float:
        """Length-normalized log-probability."""
        return self.log_prob / max(len(self.tokens), 1)


def beam_search(fused: FusedCluster, extract_ids: list[list[int]] | None,
                params: ParameterSet, beam: int = DEFAULT_BEAM,
                max_len: int = DEFAULT_MAX_LEN) -> list[Hypothesis]:
    """Breadth-first expansion keeping the ``beam`` best running sequences.

    Running hypotheses are pruned on cumulative log-probability; finished
    ones are ranked by length-normalized score.  Ties break toward the
    lexicographically smaller token sequence, making results reproducible.
    """
    if beam < 1:
        raise TensorError(f"beam must be >= 1, got {beam}")
    if max_len < 1:
        raise TensorError(f"max_len must be >= 1, got {max_len}")
    start = init_state(fused, extract_ids, params, mode="eval")
    live = [Hypothesis(tokens=(), log_prob=0.0, state=start, finished=False)]
    finished: list[Hypothesis] = []

    for _ in range(max_len):
        candidates: list[Hypothesis] = []
        for hyp in live:
            prev = hyp.tokens[-1] if hyp.tokens else BOS_ID
            out, next_state = decode_step(hyp.state, prev, fused, params, mode="eval")
            log_p = np.log(np.maximum(out.distribution.data, LOG_FLOOR))
            for token in range(log_p.shape[0]):
                candidates.append(Hypothesis(
                    tokens=hyp.tokens + (token,),
                    log_prob=hyp.log_prob + float(log_p[token]),
                    state=next_state,
                    finished=token == EOS_ID))
        candidates.sort(key=lambda h: (-h.log_prob, h.tokens))
        top = candidates[:beam]
        finished.extend(h for h in top if h.finished)
        live = [h for h in top if not h.finished]
        if not live:
            break
    # Anything still running at the length cap counts as finished.
    finished.extend(replace(h, finished=True) for h in live)
    finished.sort(key=lambda h: (-h.score, h.tokens))
    return finished[:beam]


def hypothesis_tokens(hyp: Hypothesis, fused: FusedCluster) -> list[str]:
    """Resolve emitted ids (extended ones included) to surface tokens."""
    special = {BOS_ID, EOS_ID, PAD_ID}
    return [fused.ext.token_of(i) for i in hyp.tokens if i not in special]


def hypothesis_text(hyp: Hypothesis, fused: FusedCluster, title: str | None = None) -> str:
    return " ".join(unmask_title(hypothesis_tokens(hyp, fused), title))


# ---------------------------------------------------------------------------
# training


@dataclass
class ClusterInstance:
    """Everything constant about one cluster during generator training."""

    encodings: ClusterEncodings
    target_ids: list[int]                   # gold summary, extended ids + EOS
    summary_encoding: np.ndarray            # gold summary under the review encoder
    extract_ids: list[list[int]] | None     # base ids of the selected reviews


@dataclass
class AbstractTrainLog:
    epoch_losses: list[float] = field(default_factory=list)
    dev_scores: list[float] = field(default_factory=list)
    stopped_early: bool = False


def prepare_instances(corpus: Corpus, vocab: Vocabulary,
                      condense_params: ParameterSet,
                      config: AbstractConfig) -> list[ClusterInstance]:
    """Encode clusters once under the frozen review encoder."""
    embedder = CondenseEmbedder(vocab, condense_params)
    instances = []
    for cluster in corpus:
        if cluster.gold_summary is None:
            raise TensorError(f"cluster {cluster.cluster_id!r} lacks a gold summary")
        encodings = encode_cluster(cluster, vocab, condense_params)
        target = encodings.ext.encode(cluster.gold_summary.tokens) + [EOS_ID]
        summary_vec = encode_review(vocab.encode(cluster.gold_summary.tokens),
                                    condense_params, mode="eval").vector.data
        extract_ids = None
        if config.use_extracts:
            k = min(config.k, len(cluster.reviews))
            selection = select_top_k(cluster.reviews, k, embedder)
            extract_ids = [vocab.encode(cluster.reviews[i].tokens)
                           for i in selection.indices]
        instances.append(ClusterInstance(
            encodings=encodings, target_ids=target,
            summary_encoding=summary_vec, extract_ids=extract_ids))
    return instances


def instance_loss(instance: ClusterInstance, params: ParameterSet,
                  negatives, mode: str, dropout_rate: float,
                  use_fusion_loss: bool) -> Tensor:
    fused = build_fused_cluster(instance.encodings, params["abstract.W_p"])
    if use_fusion_loss:
        return abstract_loss(fused, instance.target_ids, instance.summary_encoding,
                             negatives, instance.extract_ids, params, mode, dropout_rate)
    return generation_loss(fused, instance.target_ids, instance.extract_ids,
                           params, mode, dropout_rate)


def train_abstract(
    corpus: Corpus,
    vocab: Vocabulary,
    condense_params: ParameterSet,
    config: AbstractConfig,
    epochs: int,
    seed: int,
    dev: Corpus | None = None,
    batch_size: int = 8,
    lr: float = 1e-3,
    use_fusion_loss: bool = True,
    dropout_rate: float | None = None,
    patience: int = 3,
) -> tuple[ParameterSet, AbstractTrainLog]:
    """Train the generator on clusters with gold summaries.

    The review encoder stays frozen; each step resamples five negative
    summary encodings per cluster from the other clusters.
    """
    params = init_abstract_params(config, seed)
    state = OptimizerState()
    rng = init_rng(seed + 1)
    rate = config.dropout_rate if dropout_rate is None else dropout_rate
    instances = prepare_instances(corpus, vocab, condense_params, config)
    if use_fusion_loss and len(instances) < 2:
        raise TensorError("the hinge loss needs at least two clusters")
    summary_matrix = np.stack([inst.summary_encoding for inst in instances])
    dev_instances = (prepare_instances(dev, vocab, condense_params, config)
                     if dev is not None else None)
    log = AbstractTrainLog()
    best_dev = -np.inf
    best_snapshot: dict[str, np.ndarray] | None = None
    stale = 0

    for epoch in range(epochs):
        order = rng.permutation(len(instances))
        epoch_total = 0.0
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            with Tape(rng=rng) as tape:
                total = None
                for idx in batch:
                    negatives = (sample_negatives(summary_matrix, int(idx), rng)
                                 if use_fusion_loss else None)
                    loss = instance_loss(instances[int(idx)], params, negatives,
                                         "train", rate, use_fusion_loss)
                    total = loss if total is None else ad.add(total, loss)
                mean = ad.mul(total, Tensor(1.0 / len(batch)))
            grads = backward(tape, mean)
            adam_step(params, grads, state, lr=lr)
            epoch_total += float(total.data)
        log.epoch_losses.append(epoch_total / len(instances))
        logger.info("abstract epoch %d: train loss %.4f", epoch, log.epoch_losses[-1])

        if dev_instances is not None:
            from .metrics import rouge_l  # local import; metrics has no model deps
            scores = []
            for cluster, inst in zip(dev.clusters, dev_instances):
                fused = build_fused_cluster(inst.encodings, params["abstract.W_p"])
                best = beam_search(fused, inst.extract_ids, params)[0]
                produced = hypothesis_tokens(best, fused)
                scores.append(rouge_l(produced, list(cluster.gold_summary.tokens)).f1)
            dev_score = float(np.mean(scores))
            log.dev_scores.append(dev_score)
            logger.info("abstract epoch %d: dev score %.4f", epoch, dev_score)
            if dev_score > best_dev:
                best_dev = dev_score
                best_snapshot = {n: t.data.copy() for n, t in params.items()}
                stale = 0
            else:
                stale += 1
                if stale >= patience:
                    log.stopped_early = True
                    break

    if best_snapshot is not None:
        for name, values in best_snapshot.items():
            params[name].assign(values)
    return params, log
