"""Built-in verification suites behind the ``selfcheck`` command.

Each check re-derives its expected answer through an independent route
(finite differences, exhaustive enumeration, brute-force counting) and
compares against the production code path.  Smaller and faster than the
test suite, but runnable from any installed copy.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor, grad_check, precision
from .condense import CondenseConfig, encode_review, init_condense_params, review_loss
from .data import BOS_ID, EOS_ID, ExtendedVocab, Review, ReviewCluster, Vocabulary
from .decoder import (
    AbstractConfig,
    abstract_loss,
    beam_search,
    decode_step,
    init_abstract_params,
    init_state,
)
from .fusion import FusedCluster, build_fused_cluster, encode_cluster, fusion_loss, pool_reviews
from .metrics import rouge_l, rouge_n, rouge_su4
from .optim import ParameterSet

logger = logging.getLogger(__name__)

GRAD_TOLERANCE = 1e-4
SUM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _tiny_vocab() -> Vocabulary:
    return Vocabulary(["good", "bad", "food", "here"])


def _random_fused(rng: np.random.Generator, vocab: Vocabulary,
                  words: list[str], enc_dim: int) -> FusedCluster:
    ext = ExtendedVocab(vocab, words)
    return FusedCluster(
        d_prime=Tensor(rng.normal(scale=0.5, size=enc_dim)),
        weights=Tensor(np.full(2, 0.5)),
        word_table=Tensor(rng.normal(scale=0.5, size=(len(words), enc_dim))),
        unique_word_ids=ext.encode(words),
        word_counts=np.ones(len(words), dtype=int),
        ext=ext,
    )


def check_gradients(seed: int = 0) -> CheckResult:
    """Finite differences against the backward pass for all three losses."""
    with precision("float64"):
        rng = np.random.default_rng(seed)
        vocab = _tiny_vocab()
        worst = 0.0

        condense = init_condense_params(
            CondenseConfig(vocab_size=len(vocab), embedding_dim=4, hidden_dim=3), seed)
        ids = vocab.encode(["good", "food", "here"])

        def condense_builder():
            with Tape() as tape:
                loss = review_loss(ids, condense, mode="eval")
            return tape, loss

        worst = max(worst, grad_check(condense_builder, list(condense.tensors())))

        vectors = rng.normal(scale=0.5, size=(3, 6))
        gold = rng.normal(scale=0.5, size=6)
        negatives = [rng.normal(scale=0.5, size=6) for _ in range(5)]
        pooling = ParameterSet()
        pooling.add("pool.W", np.eye(6) + rng.normal(scale=0.01, size=(6, 6)))

        def fusion_builder():
            with Tape() as tape:
                pooled, _ = pool_reviews(vectors, vectors.mean(axis=0),
                                         pooling["pool.W"])
                loss = fusion_loss(pooled, gold, negatives)
            return tape, loss

        worst = max(worst, grad_check(fusion_builder, list(pooling.tensors())))

        cluster = ReviewCluster(
            cluster_id="check",
            reviews=(Review.from_text("good food here"), Review.from_text("bad food")),
            gold_summary=Review.from_text("good food"))
        encodings = encode_cluster(cluster, vocab, condense)
        target = encodings.ext.encode(["good", "food"]) + [EOS_ID]
        summary_vec = encode_review(vocab.encode(["good", "food"]),
                                    condense).vector.data
        extract_ids = [vocab.encode(r.tokens) for r in cluster.reviews]
        abstract = init_abstract_params(
            AbstractConfig(vocab_size=len(vocab), encoding_dim=6, embedding_dim=4,
                           attention_dim=5, use_extracts=True, k=2), seed + 1)

        def abstract_builder():
            with Tape() as tape:
                fused = build_fused_cluster(encodings, abstract["abstract.W_p"])
                loss = abstract_loss(fused, target, summary_vec, negatives,
                                     extract_ids, abstract)
            return tape, loss

        worst = max(worst, grad_check(abstract_builder, list(abstract.tensors())))

    return CheckResult("gradients", worst <= GRAD_TOLERANCE,
                       f"max relative error {worst:.2e} (tolerance {GRAD_TOLERANCE:.0e})")


def check_decode_distributions(seed: int = 0, steps: int = 200) -> CheckResult:
    """Random decode steps: all three distributions sum to one, gate is open."""
    with precision("float64"):
        rng = np.random.default_rng(seed)
        vocab = _tiny_vocab()
        config = AbstractConfig(vocab_size=len(vocab), encoding_dim=6,
                                embedding_dim=4, attention_dim=5, use_extracts=False)
        worst = 0.0
        for step in range(steps):
            fused = _random_fused(rng, vocab, ["good", "food", "tasty"],
                                  config.encoding_dim)
            params = init_abstract_params(config, seed * 100003 + step)
            prev = int(rng.integers(fused.ext.size))
            out, _ = decode_step(init_state(fused, None, params), prev, fused, params)
            attention = out.attention.data
            mixture = out.distribution.data
            copy = np.zeros(fused.ext.size)
            np.add.at(copy, np.asarray(fused.unique_word_ids), attention)
            gate = float(out.gate.data)
            if attention.min() < 0 or mixture.min() < 0 or copy.min() < 0:
                return CheckResult("decode-distributions", False,
                                   f"negative probability at step {step}")
            if not 0.0 < gate < 1.0:
                return CheckResult("decode-distributions", False,
                                   f"gate {gate} outside (0,1) at step {step}")
            worst = max(worst, abs(attention.sum() - 1.0), abs(copy.sum() - 1.0),
                        abs(mixture.sum() - 1.0))
    return CheckResult("decode-distributions", worst <= SUM_TOLERANCE,
                       f"{steps} steps, worst mass deviation {worst:.2e}")


def _enumerate_best(fused, params, max_len):
    """Exhaustive search over every decodable sequence."""
    best = None

    def walk(state, prev, tokens, log_prob, depth):
        nonlocal best
        out, next_state = decode_step(state, prev, fused, params)
        log_p = np.log(np.maximum(out.distribution.data, 1e-12))
        for token in range(log_p.shape[0]):
            seq = tokens + (token,)
            total = log_prob + float(log_p[token])
            if token == EOS_ID or depth + 1 == max_len:
                key = (-(total / len(seq)), seq)
                if best is None or key < best[0]:
                    best = (key, seq, total)
            else:
                walk(next_state, token, seq, total, depth + 1)

    walk(init_state(fused, None, params), BOS_ID, (), 0.0, 0)
    return best[1], best[2]


def check_beam_oracle(seed: int = 0, models: int = 3) -> CheckResult:
    """A beam of width vocab^max_len must equal exhaustive enumeration."""
    with precision("float64"):
        rng = np.random.default_rng(seed)
        vocab = Vocabulary()             # the five reserved ids only
        config = AbstractConfig(vocab_size=len(vocab), encoding_dim=4,
                                embedding_dim=3, attention_dim=3, use_extracts=False)
        max_len = 3
        for model in range(models):
            fused = _random_fused(rng, vocab, ["_unk_", "_title_"],
                                  config.encoding_dim)
            params = init_abstract_params(config, seed * 7919 + model)
            hyp = beam_search(fused, None, params,
                              beam=fused.ext.size ** max_len, max_len=max_len)[0]
            tokens, log_prob = _enumerate_best(fused, params, max_len)
            if hyp.tokens != tokens or hyp.log_prob != log_prob:
                return CheckResult("beam-oracle", False,
                                   f"model {model}: beam {hyp.tokens} != "
                                   f"enumeration {tokens}")
    return CheckResult("beam-oracle", True,
                       f"{models} models match exhaustive enumeration exactly")


def _brute_ngram(cand, ref, n):
    def counts(tokens):
        table = {}
        for i in range(len(tokens) - n + 1):
            gram = tuple(tokens[i:i + n])
            table[gram] = table.get(gram, 0) + 1
        return table

    c, r = counts(cand), counts(ref)
    match = sum(min(count, r.get(gram, 0)) for gram, count in c.items())
    p = match / sum(c.values()) if c else 0.0
    rec = match / sum(r.values()) if r else 0.0
    f1 = 2 * p * rec / (p + rec) if p + rec else 0.0
    return p, rec, f1


def _brute_lcs(cand, ref):
    rows = len(cand) + 1
    cols = len(ref) + 1
    table = [[0] * cols for _ in range(rows)]
    for i in range(1, rows):
        for j in range(1, cols):
            if cand[i - 1] == ref[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]


def _brute_su(tokens, max_skip):
    """Generate every ordered index pair, keep the close ones, add unigrams."""
    units = {}
    for token in tokens:
        units[(token,)] = units.get((token,), 0) + 1
    for i, j in itertools.combinations(range(len(tokens)), 2):
        if j - i <= max_skip:
            pair = (tokens[i], tokens[j])
            units[pair] = units.get(pair, 0) + 1
    return units


def check_metric_oracle(seed: int = 0, pairs: int = 300) -> CheckResult:
    """Random token pairs: production metrics equal brute-force counting."""
    rng = np.random.default_rng(seed)
    alphabet = ["a", "b", "c", "d"]
    for trial in range(pairs):
        cand = [alphabet[i] for i in rng.integers(4, size=rng.integers(0, 7))]
        ref = [alphabet[i] for i in rng.integers(4, size=rng.integers(1, 7))]

        for n in (1, 2):
            got = rouge_n(cand, ref, n)
            p, r, f1 = _brute_ngram(cand, ref, n)
            if (got.precision, got.recall, got.f1) != (p, r, f1):
                return CheckResult("metric-oracle", False,
                                   f"rouge-{n} mismatch on pair {trial}")

        lcs = _brute_lcs(cand, ref)
        p = lcs / len(cand) if cand else 0.0
        r = lcs / len(ref)
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        got = rouge_l(cand, ref)
        if (got.precision, got.recall, got.f1) != (p, r, f1):
            return CheckResult("metric-oracle", False,
                               f"rouge-l mismatch on pair {trial}")

        cand_units = _brute_su(cand, 4)
        ref_units = _brute_su(ref, 4)
        match = sum(min(count, ref_units.get(unit, 0))
                    for unit, count in cand_units.items())
        recall = match / sum(ref_units.values()) if ref_units else 0.0
        if rouge_su4(cand, ref).recall != recall:
            return CheckResult("metric-oracle", False,
                               f"rouge-su4 mismatch on pair {trial}")
    return CheckResult("metric-oracle", True,
                       f"{pairs} random pairs match brute-force counts exactly")


def check_extraction_oracle(seed: int = 0, instances: int = 20) -> CheckResult:
    """select_top_k against a full sort of centroid distances."""
    from .extractive import select_top_k

    rng = np.random.default_rng(seed)
    for trial in range(instances):
        n = int(rng.integers(2, 51))
        dim = int(rng.integers(2, 8))
        embeddings = rng.normal(size=(n, dim))
        embeddings[-1] = embeddings[0]      # a duplicate row exercises tie-breaking
        reviews = [Review.from_text(f"review {i}") for i in range(n)]
        table = {r.tokens: embeddings[i] for i, r in enumerate(reviews)}
        k = int(rng.integers(1, n + 1))
        selection = select_top_k(reviews, k, lambda r: table[r.tokens])
        centroid = embeddings.mean(axis=0)
        distances = np.linalg.norm(embeddings - centroid, axis=1)
        expected = [i for _, i in sorted((d, i) for i, d in enumerate(distances))][:k]
        if list(selection.indices) != expected:
            return CheckResult("extraction-oracle", False,
                               f"instance {trial}: {selection.indices} != {expected}")
    return CheckResult("extraction-oracle", True,
                       f"{instances} instances match a full distance sort exactly")


def run_all(seed: int = 0) -> list[CheckResult]:
    checks = [
        check_gradients(seed),
        check_decode_distributions(seed),
        check_beam_oracle(seed),
        check_metric_oracle(seed),
        check_extraction_oracle(seed),
    ]
    for result in checks:
        logger.info(result.line())
    return checks
