"""Estimator facade: fit/transform/predict wrappers over the functional
modules, with scikit-learn parameter conventions (constructor stores
hyperparameters verbatim; fitted state carries a trailing underscore).
"""

from __future__ import annotations

import inspect

import numpy as np

from .condense import CondenseConfig, encode_review, init_condense_params, train_condense
from .data import Vocabulary, build_vocab, tokenize
from .decoder import AbstractConfig, train_abstract
from .extractive import CondenseEmbedder, select_top_k
from .pipeline import ModelBundle, load_bundle, save_bundle, summarize_corpus
from .validation import check_corpus, check_is_fitted, check_positive_int, check_rate


class BaseEstimator:
    """Parameter plumbing shared by every estimator here.

    Constructor arguments are hyperparameters: stored as-is under the same
    name, reported by get_params, and replaceable via set_params.
    """

    @classmethod
    def _param_names(cls) -> list[str]:
        signature = inspect.signature(cls.__init__)
        return [name for name, p in signature.parameters.items()
                if name != "self" and p.kind == p.POSITIONAL_OR_KEYWORD]

    def get_params(self) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "BaseEstimator":
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(
                    f"invalid parameter {name!r} for {type(self).__name__}; "
                    f"valid parameters: {sorted(valid)}")
            setattr(self, name, value)
        return self

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


class CondenseAutoencoder(BaseEstimator):
    """The review autoencoder as a transformer: fit on a corpus, transform
    reviews into dense encodings.
    """

    def __init__(self, embedding_dim=128, hidden_dim=128, dropout_rate=0.5,
                 epochs=10, batch_size=8, learning_rate=1e-3, min_frequency=2,
                 patience=3, seed=0):
        self.embedding_dim = embedding_dim
        self.hidden_dim = hidden_dim
        self.dropout_rate = dropout_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.min_frequency = min_frequency
        self.patience = patience
        self.seed = seed

        self.vocab_: Vocabulary | None = None
        self.params_ = None
        self.config_: CondenseConfig | None = None
        self.train_log_ = None

    def fit(self, X, dev=None) -> "CondenseAutoencoder":
        corpus = check_corpus(X)
        dev_corpus = check_corpus(dev) if dev is not None else None
        check_positive_int("epochs", self.epochs)
        check_positive_int("batch_size", self.batch_size)
        check_rate("dropout_rate", self.dropout_rate)
        self.vocab_ = build_vocab(corpus, min_frequency=self.min_frequency)
        self.config_ = CondenseConfig(
            vocab_size=len(self.vocab_), embedding_dim=self.embedding_dim,
            hidden_dim=self.hidden_dim, dropout_rate=self.dropout_rate)
        self.params_, self.train_log_ = train_condense(
            corpus, self.vocab_, self.config_, epochs=self.epochs, seed=self.seed,
            dev=dev_corpus, batch_size=self.batch_size, lr=self.learning_rate,
            patience=self.patience)
        return self

    def transform(self, X) -> list[np.ndarray]:
        """Per cluster, the (N, encoding_dim) matrix of review encodings."""
        check_is_fitted(self, "params_", "vocab_")
        corpus = check_corpus(X)
        out = []
        for cluster in corpus:
            vectors = [encode_review(self.vocab_.encode(r.tokens),
                                     self.params_).vector.data
                       for r in cluster.reviews]
            out.append(np.stack(vectors))
        return out

    def fit_transform(self, X, dev=None) -> list[np.ndarray]:
        return self.fit(X, dev=dev).transform(X)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        """Encode raw review strings into a (len(texts), encoding_dim) array."""
        check_is_fitted(self, "params_", "vocab_")
        vectors = [encode_review(self.vocab_.encode(tokenize(text)),
                                 self.params_).vector.data
                   for text in texts]
        return np.stack(vectors)


class OpinionSummarizer(BaseEstimator):
    """Two-stage summarizer: review autoencoder, then the fused generator."""

    def __init__(self, embedding_dim=128, hidden_dim=128, attention_dim=256,
                 dropout_rate=0.5, condense_epochs=10, abstract_epochs=10,
                 batch_size=8, learning_rate=1e-3, use_extracts=True, k=5,
                 beam=5, max_len=40, use_fusion_loss=True, min_frequency=2,
                 patience=3, seed=0):
        self.embedding_dim = embedding_dim
        self.hidden_dim = hidden_dim
        self.attention_dim = attention_dim
        self.dropout_rate = dropout_rate
        self.condense_epochs = condense_epochs
        self.abstract_epochs = abstract_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.use_extracts = use_extracts
        self.k = k
        self.beam = beam
        self.max_len = max_len
        self.use_fusion_loss = use_fusion_loss
        self.min_frequency = min_frequency
        self.patience = patience
        self.seed = seed

        self.bundle_: ModelBundle | None = None
        self.condense_log_ = None
        self.abstract_log_ = None

    def fit(self, X, dev=None) -> "OpinionSummarizer":
        corpus = check_corpus(X)
        dev_corpus = check_corpus(dev) if dev is not None else None
        check_positive_int("condense_epochs", self.condense_epochs)
        check_positive_int("abstract_epochs", self.abstract_epochs)
        check_positive_int("beam", self.beam)
        check_positive_int("k", self.k)
        check_rate("dropout_rate", self.dropout_rate)

        vocab = build_vocab(corpus, min_frequency=self.min_frequency)
        condense_config = CondenseConfig(
            vocab_size=len(vocab), embedding_dim=self.embedding_dim,
            hidden_dim=self.hidden_dim, dropout_rate=self.dropout_rate)
        condense_params, self.condense_log_ = train_condense(
            corpus, vocab, condense_config, epochs=self.condense_epochs,
            seed=self.seed, dev=dev_corpus, batch_size=self.batch_size,
            lr=self.learning_rate, patience=self.patience)

        abstract_config = AbstractConfig(
            vocab_size=len(vocab), encoding_dim=condense_config.encoding_dim,
            embedding_dim=self.embedding_dim, attention_dim=self.attention_dim,
            use_extracts=self.use_extracts, dropout_rate=self.dropout_rate,
            k=self.k)
        abstract_params, self.abstract_log_ = train_abstract(
            corpus, vocab, condense_params, abstract_config,
            epochs=self.abstract_epochs, seed=self.seed, dev=dev_corpus,
            batch_size=self.batch_size, lr=self.learning_rate,
            use_fusion_loss=self.use_fusion_loss, patience=self.patience)

        self.bundle_ = ModelBundle(
            vocab=vocab, condense=condense_params, abstract=abstract_params,
            condense_config=condense_config, abstract_config=abstract_config)
        return self

    def predict(self, X) -> list[str]:
        """One summary string per cluster."""
        return [r.text for r in self.predict_results(X)]

    def predict_results(self, X):
        check_is_fitted(self, "bundle_")
        corpus = check_corpus(X)
        return summarize_corpus(corpus, self.bundle_, beam=self.beam,
                                max_len=self.max_len, k=self.k)

    def score(self, X) -> float:
        """Corpus-mean ROUGE-L F1 of predictions against gold summaries."""
        from .metrics import evaluate_corpus

        corpus = check_corpus(X)
        predictions = self.predict(corpus)
        report = evaluate_corpus(predictions, corpus)
        return report.means["rougeL_f1"]

    def save(self, path) -> None:
        check_is_fitted(self, "bundle_")
        save_bundle(path, self.bundle_)

    @classmethod
    def from_checkpoint(cls, path) -> "OpinionSummarizer":
        """Rebuild an inference-ready summarizer from a saved bundle."""
        bundle = load_bundle(path)
        config = bundle.abstract_config
        est = cls(embedding_dim=config.embedding_dim,
                  hidden_dim=bundle.condense_config.hidden_dim,
                  attention_dim=config.attention_dim,
                  dropout_rate=config.dropout_rate,
                  use_extracts=config.use_extracts, k=config.k)
        est.bundle_ = bundle
        return est


class CentroidExtractor(BaseEstimator):
    """Extractive baseline: the k reviews nearest the encoding centroid."""

    def __init__(self, encoder=None, k=1, metric="euclidean"):
        self.encoder = encoder
        self.k = k
        self.metric = metric

        self.encoder_: CondenseAutoencoder | None = None

    def fit(self, X, dev=None) -> "CentroidExtractor":
        check_positive_int("k", self.k)
        encoder = self.encoder if self.encoder is not None else CondenseAutoencoder()
        if encoder.params_ is None:
            encoder.fit(X, dev=dev)
        self.encoder_ = encoder
        return self

    def predict(self, X) -> list[list[str]]:
        """Per cluster, the k selected review texts in centrality order."""
        check_is_fitted(self, "encoder_")
        corpus = check_corpus(X)
        embedder = CondenseEmbedder(self.encoder_.vocab_, self.encoder_.params_)
        out = []
        for cluster in corpus:
            k = min(self.k, len(cluster.reviews))
            selection = select_top_k(cluster.reviews, k, embedder,
                                     metric=self.metric)
            out.append([cluster.reviews[i].raw_text for i in selection.indices])
        return out
