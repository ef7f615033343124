"""End-to-end assembly: bundling the two trained models with their
vocabulary, disk round trips, and cluster-to-summary inference.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autodiff import TensorError
from .condense import CondenseConfig, config_from_params
from .data import Corpus, ReviewCluster, Vocabulary
from .decoder import (
    AbstractConfig,
    Hypothesis,
    abstract_config_from_params,
    beam_search,
    hypothesis_text,
    hypothesis_tokens,
)
from .extractive import CondenseEmbedder, select_top_k
from .fusion import build_fused_cluster, encode_cluster
from .optim import CheckpointError, ParameterSet, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

CONDENSE_PREFIX = "condense."
ABSTRACT_PREFIX = "abstract."


@dataclass
class ModelBundle:
    """Everything inference needs: both parameter sets plus the vocabulary."""

    vocab: Vocabulary
    condense: ParameterSet
    abstract: ParameterSet
    condense_config: CondenseConfig
    abstract_config: AbstractConfig


def vocab_path_for(checkpoint_path) -> str:
    """The vocabulary sidecar sits next to its checkpoint."""
    return f"{checkpoint_path}.vocab"


def split_params(params: ParameterSet) -> tuple[ParameterSet, ParameterSet]:
    """Separate a merged checkpoint into condense and abstract sets."""
    condense, abstract = ParameterSet(), ParameterSet()
    for name, tensor in params.items():
        if name.startswith(CONDENSE_PREFIX):
            condense.add(name, tensor)
        elif name.startswith(ABSTRACT_PREFIX):
            abstract.add(name, tensor)
        else:
            raise CheckpointError(f"tensor {name!r} belongs to neither model")
    return condense, abstract


def save_bundle(path, bundle: ModelBundle) -> None:
    merged = bundle.condense.merged_with(bundle.abstract)
    meta = {
        "stage": "full",
        "k": bundle.abstract_config.k,
        "dropout_rate": bundle.abstract_config.dropout_rate,
    }
    save_checkpoint(path, merged, meta)
    bundle.vocab.save(vocab_path_for(path))


def load_bundle(path) -> ModelBundle:
    params, meta = load_checkpoint(path)
    condense, abstract = split_params(params)
    if not len(condense):
        raise CheckpointError(f"{path}: no condense tensors; train that stage first")
    if not len(abstract):
        raise CheckpointError(f"{path}: no abstract tensors; train that stage first")
    vocab = Vocabulary.load(vocab_path_for(path))
    condense_config = config_from_params(condense)
    abstract_config = abstract_config_from_params(
        abstract, k=int(meta.get("k", 5)),
        dropout_rate=float(meta.get("dropout_rate", 0.5)))
    if condense_config.vocab_size != len(vocab):
        raise CheckpointError(
            f"{path}: embeddings cover {condense_config.vocab_size} ids but the "
            f"vocabulary has {len(vocab)}")
    return ModelBundle(vocab=vocab, condense=condense, abstract=abstract,
                       condense_config=condense_config,
                       abstract_config=abstract_config)


def save_condense_checkpoint(path, params: ParameterSet, vocab: Vocabulary) -> None:
    save_checkpoint(path, params, {"stage": "condense"})
    vocab.save(vocab_path_for(path))


def load_condense_checkpoint(path) -> tuple[ParameterSet, Vocabulary, CondenseConfig]:
    params, _ = load_checkpoint(path)
    condense, abstract = split_params(params)
    if not len(condense):
        raise CheckpointError(f"{path}: contains no condense tensors")
    del abstract  # tolerated: a full bundle also serves as a condense checkpoint
    vocab = Vocabulary.load(vocab_path_for(path))
    return condense, vocab, config_from_params(condense)


@dataclass
class SummaryResult:
    """One cluster summarized, with the pooling weights for inspection."""

    cluster_id: str
    text: str
    tokens: list[str]
    weights: np.ndarray                     # (N,) attentive-pooling weights
    extract_indices: tuple[int, ...] | None
    hypothesis: Hypothesis


def _resolve_extract_request(bundle: ModelBundle, use_extracts: bool | None) -> bool:
    has_salience = "abstract.sal.b_i" in bundle.abstract
    if use_extracts is None:
        return has_salience
    if use_extracts and not has_salience:
        raise TensorError("extracts requested but the model was trained without them")
    if not use_extracts and has_salience:
        raise TensorError("extracts disabled but the model was trained with them; "
                          "its decoder state needs the salience encoding")
    return use_extracts


def summarize_cluster(
    cluster: ReviewCluster,
    bundle: ModelBundle,
    beam: int = 5,
    max_len: int = 40,
    k: int | None = None,
    use_extracts: bool | None = None,
    query: np.ndarray | None = None,
) -> SummaryResult:
    """Encode, pool, and decode one cluster.

    ``query`` overrides the pooling query (the customization hook); the
    default is the mean review encoding.
    """
    with_extracts = _resolve_extract_request(bundle, use_extracts)
    encodings = encode_cluster(cluster, bundle.vocab, bundle.condense)
    fused = build_fused_cluster(encodings, bundle.abstract["abstract.W_p"], query)

    extract_ids = None
    indices: tuple[int, ...] | None = None
    if with_extracts:
        top_k = min(k if k is not None else bundle.abstract_config.k,
                    len(cluster.reviews))
        embedder = CondenseEmbedder(bundle.vocab, bundle.condense)
        selection = select_top_k(cluster.reviews, top_k, embedder)
        indices = selection.indices
        extract_ids = [bundle.vocab.encode(cluster.reviews[i].tokens)
                       for i in indices]

    best = beam_search(fused, extract_ids, bundle.abstract,
                       beam=beam, max_len=max_len)[0]
    return SummaryResult(
        cluster_id=cluster.cluster_id,
        text=hypothesis_text(best, fused, cluster.title),
        tokens=hypothesis_tokens(best, fused),
        weights=fused.weights.data.copy(),
        extract_indices=indices,
        hypothesis=best,
    )


def summarize_corpus(
    corpus: Corpus,
    bundle: ModelBundle,
    beam: int = 5,
    max_len: int = 40,
    k: int | None = None,
    use_extracts: bool | None = None,
    workers: int = 1,
) -> list[SummaryResult]:
    """Summarize every cluster, preserving corpus order.

    Inference is pure, so ``workers`` > 1 fans clusters out over threads.
    """
    def run(cluster: ReviewCluster) -> SummaryResult:
        return summarize_cluster(cluster, bundle, beam=beam, max_len=max_len,
                                 k=k, use_extracts=use_extracts)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, corpus.clusters))
    return [run(cluster) for cluster in corpus.clusters]


def write_summaries(path, results: list[SummaryResult]) -> None:
    """One JSON record per cluster: id and summary text."""
    with open(path, "w", encoding="utf-8") as fh:
        for result in results:
            fh.write(json.dumps({"id": result.cluster_id, "summary": result.text}) + "\n")
    logger.info("wrote %d summaries to %s", len(results), path)
