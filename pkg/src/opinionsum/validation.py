"""Input checks shared by the estimator facade."""

from __future__ import annotations

import os

from .data import Corpus, CorpusError, load_corpus


class NotFittedError(RuntimeError):
    """An estimator method needing fitted state was called before fit()."""


def check_corpus(X) -> Corpus:
    """Accept a Corpus or a path to a JSON-lines corpus file."""
    if isinstance(X, Corpus):
        return X
    if isinstance(X, (str, os.PathLike)):
        return load_corpus(X)
    raise CorpusError(f"expected a Corpus or a corpus path, got {type(X).__name__}")


def check_is_fitted(estimator, *attributes: str) -> None:
    missing = [a for a in attributes if getattr(estimator, a, None) is None]
    if missing:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first "
            f"(missing {', '.join(missing)})")


def check_positive_int(name: str, value, minimum: int = 1) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return value


def check_rate(name: str, value) -> float:
    value = float(value)
    if not 0.0 <= value < 1.0:
        raise ValueError(f"{name} must lie in [0, 1), got {value!r}")
    return value
