"""Decoder step arithmetic, losses, beam search, and generator training."""

from dataclasses import replace

import numpy as np
import pytest

from opinionsum.autodiff import Tape, Tensor, TensorError, backward, grad_check, precision
from opinionsum.condense import CondenseConfig, encode_review, init_condense_params
from opinionsum.data import (
    BOS_ID,
    EOS_ID,
    TITLE_ID,
    UNK_ID,
    ExtendedVocab,
    Review,
    ReviewCluster,
    Vocabulary,
    build_vocab,
    generate_toy_corpus,
)
from opinionsum.decoder import (
    AbstractConfig,
    Hypothesis,
    abstract_config_from_params,
    abstract_loss,
    beam_search,
    decode_step,
    generation_loss,
    hypothesis_text,
    hypothesis_tokens,
    init_abstract_params,
    init_state,
    prepare_instances,
    train_abstract,
)
from opinionsum.fusion import FusedCluster, build_fused_cluster, encode_cluster

SMALL = AbstractConfig(vocab_size=9, encoding_dim=6, embedding_dim=4,
                       attention_dim=5, use_extracts=False, dropout_rate=0.0, k=2)
WITH_EXTRACTS = replace(SMALL, use_extracts=True)

TOY_ASPECTS = {"food": ["pizza", "burger"], "service": ["waiter", "staff"]}
TOY_SENTIMENTS = (["great", "lovely"], ["awful", "dreadful"])


@pytest.fixture(autouse=True)
def float64_mode():
    with precision("float64"):
        yield


def make_vocab() -> Vocabulary:
    return Vocabulary(["good", "bad", "food", "here"])


def make_fused(seed=0, oov=("tasty",), enc_dim=SMALL.encoding_dim):
    """A hand-built fused cluster: full control over the word table."""
    vocab = make_vocab()
    words = ["good", "bad", "food", "here", *oov]
    ext = ExtendedVocab(vocab, words)
    rng = np.random.default_rng(seed)
    table = rng.normal(scale=0.5, size=(len(words), enc_dim))
    fused = FusedCluster(
        d_prime=Tensor(rng.normal(scale=0.5, size=enc_dim)),
        weights=Tensor(np.full(3, 1.0 / 3)),
        word_table=Tensor(table),
        unique_word_ids=ext.encode(words),
        word_counts=np.ones(len(words), dtype=int),
        ext=ext,
    )
    return fused, vocab


def np_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def np_softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def mirror_step(params, fused, prev, h, c):
    """Recompute one decode step in plain numpy (no-extracts layout)."""
    p = {name: t.data for name, t in params.items()}

    def lstm_pre(gate, x, hidden):
        return (x @ p[f"abstract.dec.Wx_{gate}"]
                + hidden @ p[f"abstract.dec.Wh_{gate}"]
                + p[f"abstract.dec.b_{gate}"])

    x = p["abstract.embeddings"][prev]
    i = np_sigmoid(lstm_pre("i", x, h))
    f = np_sigmoid(lstm_pre("f", x, h))
    g = np.tanh(lstm_pre("g", x, h))
    o = np_sigmoid(lstm_pre("o", x, h))
    c_new = f * c + i * g
    s_new = o * np.tanh(c_new)

    table = fused.word_table.data
    pre = np.tanh(table @ p["abstract.att.W_h"] + s_new @ p["abstract.att.W_s"]
                  + p["abstract.att.b"])
    attention = np_softmax(pre @ p["abstract.att.v"])
    context = attention @ table
    gen = np_softmax(np.concatenate([s_new, context]) @ p["abstract.out.W"]
                     + p["abstract.out.b"])
    gate = np_sigmoid(p["abstract.gate.v_s"] @ s_new
                      + p["abstract.gate.v_c"] @ context
                      + p["abstract.gate.v_y"] @ x)

    ext_size = fused.ext.size
    copy = np.zeros(ext_size)
    np.add.at(copy, np.asarray(fused.unique_word_ids), attention)
    padded = np.concatenate([gen, np.zeros(ext_size - gen.shape[0])])
    dist = gate * padded + (1.0 - gate) * copy
    return {"s": s_new, "c": c_new, "attention": attention, "context": context,
            "gen": gen, "gate": float(gate), "copy": copy, "dist": dist}


class TestInitState:
    def test_main_state_is_the_pooled_encoding(self):
        fused, _ = make_fused()
        params = init_abstract_params(SMALL, 0)
        state = init_state(fused, None, params)
        np.testing.assert_array_equal(state.s.data, fused.d_prime.data)
        assert not state.s_cell.data.any()
        assert state.r is None and not state.uses_extracts
        assert state.t == 0

    def test_salience_state_comes_from_the_extracts(self):
        fused, _ = make_fused()
        params = init_abstract_params(WITH_EXTRACTS, 0)
        state = init_state(fused, [[5, 6], [7]], params)
        assert state.uses_extracts
        assert state.r.shape == (SMALL.encoding_dim,)
        assert not state.r_cell.data.any()

    def test_salience_state_depends_on_the_extract_tokens(self):
        fused, _ = make_fused()
        params = init_abstract_params(WITH_EXTRACTS, 0)
        a = init_state(fused, [[5, 6]], params).r.data
        b = init_state(fused, [[7, 8]], params).r.data
        assert not np.array_equal(a, b)

    def test_missing_extracts_rejected_when_enabled(self):
        fused, _ = make_fused()
        params = init_abstract_params(WITH_EXTRACTS, 0)
        with pytest.raises(TensorError):
            init_state(fused, None, params)
        with pytest.raises(TensorError):
            init_state(fused, [[]], params)

    def test_extracts_ignored_when_model_has_no_salience_encoder(self):
        fused, _ = make_fused()
        params = init_abstract_params(SMALL, 0)
        state = init_state(fused, [[5, 6]], params)
        assert state.r is None

    def test_train_mode_dropout_needs_a_tape(self):
        fused, _ = make_fused()
        params = init_abstract_params(WITH_EXTRACTS, 0)
        with pytest.raises(TensorError):
            init_state(fused, [[5, 6]], params, mode="train", dropout_rate=0.5)


class TestDecodeStep:
    def test_outputs_are_valid_distributions(self):
        for seed in range(4):
            fused, _ = make_fused(seed=seed)
            params = init_abstract_params(SMALL, seed + 10)
            state = init_state(fused, None, params)
            out, new_state = decode_step(state, BOS_ID, fused, params)
            dist = out.distribution.data
            assert dist.shape == (fused.ext.size,)
            assert (dist >= 0).all()
            assert abs(dist.sum() - 1.0) < 1e-9
            assert abs(out.attention.data.sum() - 1.0) < 1e-9
            assert 0.0 < float(out.gate.data) < 1.0
            assert new_state.t == 1

    def test_matches_a_plain_numpy_recomputation(self):
        fused, _ = make_fused(seed=3)
        params = init_abstract_params(SMALL, 7)
        state = init_state(fused, None, params)
        out, new_state = decode_step(state, 5, fused, params)
        mirror = mirror_step(params, fused, 5,
                             fused.d_prime.data, np.zeros(SMALL.encoding_dim))
        np.testing.assert_allclose(out.attention.data, mirror["attention"], atol=1e-12)
        np.testing.assert_allclose(out.context.data, mirror["context"], atol=1e-12)
        assert abs(float(out.gate.data) - mirror["gate"]) < 1e-12
        np.testing.assert_allclose(out.distribution.data, mirror["dist"], atol=1e-12)
        np.testing.assert_allclose(new_state.s.data, mirror["s"], atol=1e-12)
        np.testing.assert_allclose(new_state.s_cell.data, mirror["c"], atol=1e-12)

    def test_mixture_never_drops_below_either_component(self):
        for seed in range(5):
            fused, _ = make_fused(seed=seed)
            params = init_abstract_params(SMALL, seed)
            out, _ = decode_step(init_state(fused, None, params), BOS_ID, fused, params)
            mirror = mirror_step(params, fused, BOS_ID,
                                 fused.d_prime.data, np.zeros(SMALL.encoding_dim))
            gate = mirror["gate"]
            padded = np.concatenate([mirror["gen"],
                                     np.zeros(fused.ext.size - len(mirror["gen"]))])
            dist = out.distribution.data
            assert (dist - gate * padded >= -1e-12).all()
            assert (dist - (1.0 - gate) * mirror["copy"] >= -1e-12).all()

    def test_copy_mass_equals_the_attention_mass(self):
        fused, _ = make_fused(seed=2)
        params = init_abstract_params(SMALL, 2)
        out, _ = decode_step(init_state(fused, None, params), 6, fused, params)
        copy = np.zeros(fused.ext.size)
        np.add.at(copy, np.asarray(fused.unique_word_ids), out.attention.data)
        assert abs(copy.sum() - out.attention.data.sum()) < 1e-12

    def test_saturated_gate_reduces_to_the_generation_distribution(self):
        fused, _ = make_fused(seed=1)
        params = init_abstract_params(SMALL, 1)
        params["abstract.gate.v_s"].assign(np.zeros(SMALL.query_dim))
        params["abstract.gate.v_c"].assign(np.zeros(SMALL.encoding_dim))
        x = params["abstract.embeddings"].data[5]
        params["abstract.gate.v_y"].assign(20.0 * x / (x @ x))
        out, _ = decode_step(init_state(fused, None, params), 5, fused, params)
        mirror = mirror_step(params, fused, 5,
                             fused.d_prime.data, np.zeros(SMALL.encoding_dim))
        base = SMALL.vocab_size
        dist = out.distribution.data
        assert float(out.gate.data) > 1.0 - 1e-8
        np.testing.assert_allclose(dist[:base], mirror["gen"], atol=1e-6)
        assert dist[base:].max() < 1e-6

    def test_closed_gate_with_peaked_attention_copies_that_word(self):
        # The out-of-vocabulary word "tasty" (the last table row) gets nearly
        # all the attention; with the gate shut the mixture must emit it.
        config = replace(SMALL, attention_dim=SMALL.encoding_dim)
        fused, _ = make_fused(seed=0, enc_dim=config.encoding_dim)
        table = -3.0 * np.ones_like(fused.word_table.data)
        table[-1] = 3.0
        fused.word_table.assign(table)
        params = init_abstract_params(config, 0)
        params["abstract.att.W_h"].assign(2.0 * np.eye(config.encoding_dim))
        params["abstract.att.W_s"].assign(np.zeros((config.query_dim, config.attention_dim)))
        params["abstract.att.b"].assign(np.zeros(config.attention_dim))
        params["abstract.att.v"].assign(5.0 * np.ones(config.attention_dim))
        params["abstract.gate.v_s"].assign(np.zeros(config.query_dim))
        params["abstract.gate.v_c"].assign(np.zeros(config.encoding_dim))
        x = params["abstract.embeddings"].data[5]
        params["abstract.gate.v_y"].assign(-20.0 * x / (x @ x))
        out, _ = decode_step(init_state(fused, None, params), 5, fused, params)
        tasty = fused.unique_word_ids[-1]
        assert tasty == config.vocab_size      # a pure copy id
        assert float(out.gate.data) < 1e-8
        assert out.distribution.data[tasty] > 1.0 - 1e-6
        # Base ids absent from the cluster get almost nothing.
        assert out.distribution.data[:5].max() < 1e-6

    def test_extended_input_id_embeds_as_unknown(self):
        fused, _ = make_fused(seed=4)
        params = init_abstract_params(SMALL, 4)
        ext_id = fused.ext.size - 1
        assert ext_id >= SMALL.vocab_size
        a, _ = decode_step(init_state(fused, None, params), ext_id, fused, params)
        b, _ = decode_step(init_state(fused, None, params), UNK_ID, fused, params)
        assert a.distribution.data.tobytes() == b.distribution.data.tobytes()

    def test_out_of_range_previous_token_rejected(self):
        fused, _ = make_fused()
        params = init_abstract_params(SMALL, 0)
        state = init_state(fused, None, params)
        with pytest.raises(TensorError):
            decode_step(state, -1, fused, params)
        with pytest.raises(TensorError):
            decode_step(state, fused.ext.size, fused, params)

    def test_salience_state_changes_the_distribution(self):
        fused, _ = make_fused()
        plain = init_abstract_params(SMALL, 0)
        extracts = init_abstract_params(WITH_EXTRACTS, 0)
        a, _ = decode_step(init_state(fused, None, plain), BOS_ID, fused, plain)
        b, _ = decode_step(init_state(fused, [[5, 6, 7]], extracts), BOS_ID,
                           fused, extracts)
        assert a.distribution.shape == b.distribution.shape
        assert not np.array_equal(a.distribution.data, b.distribution.data)


class TestLosses:
    def stepwise_nll(self, fused, target_ids, extract_ids, params):
        state = init_state(fused, extract_ids, params)
        prev, total = BOS_ID, 0.0
        for target in target_ids:
            out, state = decode_step(state, prev, fused, params)
            total = total + -np.log(out.distribution.data[target])
            prev = target
        return total

    def test_generation_loss_accumulates_stepwise_nll(self):
        fused, _ = make_fused(seed=5)
        params = init_abstract_params(SMALL, 5)
        target = [5, 7, fused.ext.size - 1, EOS_ID]
        loss = generation_loss(fused, target, None, params)
        expected = self.stepwise_nll(fused, target, None, params)
        assert abs(float(loss.data) - expected) < 1e-12

    def test_generation_loss_with_extracts(self):
        fused, _ = make_fused(seed=6)
        params = init_abstract_params(WITH_EXTRACTS, 6)
        target = [6, 8, EOS_ID]
        loss = generation_loss(fused, target, [[5, 6], [7, 8]], params)
        expected = self.stepwise_nll(fused, target, [[5, 6], [7, 8]], params)
        assert abs(float(loss.data) - expected) < 1e-12

    def test_empty_target_rejected(self):
        fused, _ = make_fused()
        with pytest.raises(TensorError):
            generation_loss(fused, [], None, init_abstract_params(SMALL, 0))

    def test_abstract_loss_adds_the_fusion_hinge(self):
        from opinionsum.fusion import fusion_loss

        fused, _ = make_fused(seed=7)
        params = init_abstract_params(SMALL, 7)
        rng = np.random.default_rng(7)
        summary = rng.normal(size=SMALL.encoding_dim)
        negatives = [rng.normal(size=SMALL.encoding_dim) for _ in range(5)]
        target = [5, EOS_ID]
        total = abstract_loss(fused, target, summary, negatives, None, params)
        generate = generation_loss(fused, target, None, params)
        hinge = fusion_loss(fused.d_prime, summary, negatives)
        assert abs(float(total.data) - float(generate.data) - float(hinge.data)) < 1e-12


def tiny_cluster_setup(seed=0, use_extracts=True):
    """A real two-review cluster encoded by an untrained review encoder."""
    vocab = make_vocab()
    cluster = ReviewCluster(
        cluster_id="c0",
        reviews=(Review.from_text("good food here"), Review.from_text("bad food")),
        gold_summary=Review.from_text("good food"),
    )
    cond = init_condense_params(
        CondenseConfig(vocab_size=len(vocab), embedding_dim=4, hidden_dim=3), seed)
    encodings = encode_cluster(cluster, vocab, cond)
    target = encodings.ext.encode(["good", "food"]) + [EOS_ID]
    summary_vec = encode_review(vocab.encode(["good", "food"]), cond).vector.data
    rng = np.random.default_rng(seed + 1)
    negatives = [rng.normal(scale=0.3, size=SMALL.encoding_dim) for _ in range(5)]
    extract_ids = None
    if use_extracts:
        extract_ids = [vocab.encode(r.tokens) for r in cluster.reviews]
    return encodings, target, summary_vec, negatives, extract_ids


class TestGradient:
    def run_check(self, config, use_extracts):
        encodings, target, summary_vec, negatives, extract_ids = tiny_cluster_setup(
            use_extracts=use_extracts)
        params = init_abstract_params(config, 3)

        def builder():
            with Tape() as tape:
                fused = build_fused_cluster(encodings, params["abstract.W_p"])
                loss = abstract_loss(fused, target, summary_vec, negatives,
                                     extract_ids, params)
            return tape, loss

        return grad_check(builder, list(params.tensors()))

    def test_full_objective_with_extracts(self):
        assert self.run_check(WITH_EXTRACTS, True) <= 1e-4

    def test_full_objective_without_extracts(self):
        assert self.run_check(SMALL, False) <= 1e-4

    def test_pooling_matrix_receives_gradient(self):
        encodings, target, summary_vec, negatives, _ = tiny_cluster_setup(
            use_extracts=False)
        params = init_abstract_params(SMALL, 3)
        with Tape() as tape:
            fused = build_fused_cluster(encodings, params["abstract.W_p"])
            loss = abstract_loss(fused, target, summary_vec, negatives, None, params)
        grads = backward(tape, loss)
        assert "abstract.W_p" in grads
        assert np.abs(grads["abstract.W_p"].data).max() > 0


def toy_model(seed=0, oov=("tasty",)):
    """A small vocabulary and random generator weights for search tests."""
    vocab = Vocabulary(["good"])
    words = ["good", *oov]
    ext = ExtendedVocab(vocab, words)
    rng = np.random.default_rng(seed)
    config = AbstractConfig(vocab_size=len(vocab), encoding_dim=6, embedding_dim=4,
                            attention_dim=5, use_extracts=False, dropout_rate=0.0)
    fused = FusedCluster(
        d_prime=Tensor(rng.normal(scale=0.5, size=config.encoding_dim)),
        weights=Tensor(np.full(2, 0.5)),
        word_table=Tensor(rng.normal(scale=0.5, size=(len(words), config.encoding_dim))),
        unique_word_ids=ext.encode(words),
        word_counts=np.ones(len(words), dtype=int),
        ext=ext,
    )
    params = init_abstract_params(config, seed + 100)
    return fused, params


def greedy_decode(fused, params, max_len):
    state = init_state(fused, None, params)
    tokens = []
    prev = BOS_ID
    for _ in range(max_len):
        out, state = decode_step(state, prev, fused, params)
        token = int(np.argmax(out.distribution.data))
        tokens.append(token)
        if token == EOS_ID:
            break
        prev = token
    return tuple(tokens)


def enumerate_hypotheses(fused, params, max_len):
    """Every decodable sequence, scored exactly like the beam."""
    results = []

    def walk(state, prev, tokens, log_prob, depth):
        out, next_state = decode_step(state, prev, fused, params)
        log_p = np.log(np.maximum(out.distribution.data, 1e-12))
        for token in range(log_p.shape[0]):
            seq = tokens + (token,)
            total = log_prob + float(log_p[token])
            if token == EOS_ID or depth + 1 == max_len:
                results.append((total / len(seq), seq, total))
            else:
                walk(next_state, token, seq, total, depth + 1)

    walk(init_state(fused, None, params), BOS_ID, (), 0.0, 0)
    results.sort(key=lambda r: (-r[0], r[1]))
    return results


class TestBeamSearch:
    def test_beam_one_matches_greedy_decoding(self):
        for seed in range(4):
            fused, params = toy_model(seed=seed)
            best = beam_search(fused, None, params, beam=1, max_len=6)[0]
            assert best.tokens == greedy_decode(fused, params, max_len=6)

    def test_wide_beam_recovers_the_exhaustive_argmax(self):
        for seed in (0, 1):
            fused, params = toy_model(seed=seed)
            size = fused.ext.size
            max_len = 3
            hyps = beam_search(fused, None, params, beam=size ** max_len,
                               max_len=max_len)
            oracle = enumerate_hypotheses(fused, params, max_len)
            assert hyps[0].tokens == oracle[0][1]
            assert hyps[0].log_prob == oracle[0][2]
            assert hyps[0].score == oracle[0][0]

    def test_top_score_never_drops_with_a_wider_beam(self):
        for seed in range(3):
            fused, params = toy_model(seed=seed)
            scores = [beam_search(fused, None, params, beam=b, max_len=5)[0].score
                      for b in (1, 2, 3, 5, 8)]
            for narrow, wide in zip(scores, scores[1:]):
                assert wide >= narrow - 1e-12

    def test_results_sorted_and_finished(self):
        fused, params = toy_model(seed=2)
        hyps = beam_search(fused, None, params, beam=4, max_len=5)
        assert all(h.finished for h in hyps)
        assert all(len(h.tokens) <= 5 for h in hyps)
        assert all(a.score >= b.score for a, b in zip(hyps, hyps[1:]))

    def test_deterministic(self):
        fused, params = toy_model(seed=3)
        a = beam_search(fused, None, params, beam=3, max_len=5)
        b = beam_search(fused, None, params, beam=3, max_len=5)
        assert [(h.tokens, h.log_prob) for h in a] == [(h.tokens, h.log_prob) for h in b]

    def test_length_cap_forces_a_finish(self):
        fused, params = toy_model(seed=4)
        params["abstract.out.b"].assign(
            np.where(np.arange(fused.ext.base_size) == EOS_ID, -40.0, 0.0))
        hyps = beam_search(fused, None, params, beam=2, max_len=3)
        assert all(h.finished for h in hyps)
        assert all(EOS_ID not in h.tokens for h in hyps)
        assert all(len(h.tokens) == 3 for h in hyps)

    def test_invalid_sizes_rejected(self):
        fused, params = toy_model()
        with pytest.raises(TensorError):
            beam_search(fused, None, params, beam=0)
        with pytest.raises(TensorError):
            beam_search(fused, None, params, max_len=0)


class TestHypothesisText:
    def test_specials_stripped_and_extended_ids_resolved(self):
        fused, _ = make_fused()
        tasty = fused.ext.size - 1
        hyp = Hypothesis(tokens=(BOS_ID, 5, tasty, EOS_ID), log_prob=-1.0,
                         state=None, finished=True)
        assert hypothesis_tokens(hyp, fused) == ["good", "tasty"]

    def test_title_token_is_unmasked_in_text(self):
        fused, _ = make_fused()
        hyp = Hypothesis(tokens=(5, TITLE_ID, EOS_ID), log_prob=-1.0,
                         state=None, finished=True)
        assert hypothesis_text(hyp, fused, title="joe's diner") == "good joe's diner"
        assert hypothesis_text(hyp, fused) == "good _title_"

    def test_score_normalizes_by_length(self):
        hyp = Hypothesis(tokens=(5, 6, EOS_ID), log_prob=-6.0, state=None, finished=True)
        assert hyp.score == -2.0


def toy_training_corpus(seed=0, clusters=3):
    return generate_toy_corpus(clusters=clusters, reviews_per_cluster=3,
                               aspects=TOY_ASPECTS, sentiments=TOY_SENTIMENTS,
                               seed=seed)


def toy_training_setup(seed=0, clusters=3):
    corpus = toy_training_corpus(seed=seed, clusters=clusters)
    vocab = build_vocab(corpus, min_frequency=1)
    cond = init_condense_params(
        CondenseConfig(vocab_size=len(vocab), embedding_dim=4, hidden_dim=3), seed)
    config = AbstractConfig(vocab_size=len(vocab), encoding_dim=6, embedding_dim=4,
                            attention_dim=5, use_extracts=True, dropout_rate=0.3, k=2)
    return corpus, vocab, cond, config


class TestTraining:
    def test_prepare_instances_requires_gold_summaries(self):
        corpus, vocab, cond, config = toy_training_setup()
        bare = ReviewCluster(cluster_id="x", reviews=corpus.clusters[0].reviews)
        from opinionsum.data import Corpus

        with pytest.raises(TensorError):
            prepare_instances(Corpus(clusters=(bare,), split="train"),
                              vocab, cond, config)

    def test_prepared_targets_end_with_eos(self):
        corpus, vocab, cond, config = toy_training_setup()
        instances = prepare_instances(corpus, vocab, cond, config)
        assert len(instances) == 3
        for inst in instances:
            assert inst.target_ids[-1] == EOS_ID
            assert len(inst.extract_ids) == 2

    def test_smoke_and_seed_reproducibility(self):
        corpus, vocab, cond, config = toy_training_setup()
        params_a, log_a = train_abstract(corpus, vocab, cond, config,
                                         epochs=2, seed=1, batch_size=2)
        params_b, log_b = train_abstract(corpus, vocab, cond, config,
                                         epochs=2, seed=1, batch_size=2)
        assert len(log_a.epoch_losses) == 2
        assert log_a.epoch_losses == log_b.epoch_losses
        for name in params_a.names():
            assert params_a[name].data.tobytes() == params_b[name].data.tobytes()

    def test_different_seeds_diverge(self):
        corpus, vocab, cond, config = toy_training_setup()
        _, log_a = train_abstract(corpus, vocab, cond, config,
                                  epochs=1, seed=1, batch_size=2)
        _, log_b = train_abstract(corpus, vocab, cond, config,
                                  epochs=1, seed=2, batch_size=2)
        assert log_a.epoch_losses != log_b.epoch_losses

    def test_fusion_loss_needs_at_least_two_clusters(self):
        corpus, vocab, cond, config = toy_training_setup(clusters=1)
        with pytest.raises(TensorError):
            train_abstract(corpus, vocab, cond, config, epochs=1, seed=0)
        _, log = train_abstract(corpus, vocab, cond, config, epochs=1, seed=0,
                                use_fusion_loss=False)
        assert len(log.epoch_losses) == 1

    def test_dev_early_stopping(self):
        corpus, vocab, cond, config = toy_training_setup()
        _, log = train_abstract(corpus, vocab, cond, config, epochs=10, seed=0,
                                dev=corpus, lr=0.0, patience=2)
        assert log.stopped_early
        assert len(log.dev_scores) == 3

    def test_config_round_trip(self):
        for config in (SMALL, WITH_EXTRACTS):
            recovered = abstract_config_from_params(
                init_abstract_params(config, 0), k=config.k,
                dropout_rate=config.dropout_rate)
            assert recovered == config
