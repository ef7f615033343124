"""Command-line entry point.

Subcommands: train, summarize, customize, extract, evaluate, gentoy,
selfcheck.  Exit codes: 0 success, 1 usage error, 2 data error, 3 check
failure.  Every command logs its resolved configuration, and all
randomness flows from the --seed flag.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass

from .autodiff import TensorError, get_precision, precision
from .condense import CondenseConfig, train_condense
from .customization import BackgroundSet, build_query
from .data import (
    Corpus,
    CorpusError,
    build_vocab,
    generate_toy_corpus,
    load_corpus,
    save_corpus,
)
from .decoder import AbstractConfig, train_abstract
from .extractive import CondenseEmbedder, select_top_k
from .metrics import evaluate_corpus
from .optim import CheckpointError
from .pipeline import (
    ModelBundle,
    load_bundle,
    load_condense_checkpoint,
    save_bundle,
    save_condense_checkpoint,
    summarize_cluster,
    summarize_corpus,
    write_summaries,
)
from .selfcheck import run_all

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK = 3

# Marker vocabularies for the built-in toy generator; kept clear of the
# generator's template filler words.
TOY_ASPECTS = {
    "food": ("pasta", "burger", "salad"),
    "service": ("waiter", "staff", "host"),
}
TOY_SENTIMENTS = (
    ("great", "lovely", "fantastic"),
    ("awful", "bland", "dreadful"),
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so usage errors map to exit code 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass(frozen=True)
class RunConfig:
    """The full resolved configuration of one command invocation."""

    command: str
    corpus: str | None = None
    dev: str | None = None
    checkpoint: str | None = None
    out: str | None = None
    background: str | None = None
    need: str | None = None
    seed: int = 0
    embedding_dim: int = 128
    hidden_dim: int = 256       # encoder output width, both directions together
    batch_size: int = 8
    beam: int = 5
    dropout_rate: float = 0.5
    k: int = 5
    max_len: int = 40
    epochs: int = 10
    learning_rate: float = 1e-3
    min_frequency: int = 2
    use_extracts: bool | None = None
    precision: str = "float32"
    workers: int = 1


def _resolve_no_extracts(value: str | None, when_missing: bool | None) -> bool | None:
    """--no-extracts is an optional-value flag: absent, "yes", or "no".

    Returns the use_extracts setting; ``when_missing`` supplies each
    command's default (None means follow the checkpoint).
    """
    if value is None:
        return when_missing
    return value == "no"


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    defaults = {
        "train": True,          # train with extracts unless told otherwise
        "customize": False,     # customization defaults to extracts off
    }
    fields = {
        "command": args.command,
        "seed": args.seed,
        "precision": args.precision,
        "use_extracts": _resolve_no_extracts(
            getattr(args, "no_extracts", None),
            defaults.get(args.command)),
    }
    for name in ("corpus", "dev", "checkpoint", "out", "background", "need",
                 "workers", "max_len"):
        if hasattr(args, name):
            fields[name] = getattr(args, name)
    for flag, field_name in (("beam", "beam"), ("k", "k"),
                             ("batch", "batch_size"), ("epochs", "epochs")):
        if hasattr(args, flag):
            fields[field_name] = getattr(args, flag)
    return RunConfig(**fields)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="opinionsum",
                     description="train and run the opinion summarizer")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    def add_no_extracts(p):
        p.add_argument("--no-extracts", dest="no_extracts", nargs="?",
                       const="yes", choices=("yes", "no"), default=None,
                       help="decode without salience extracts "
                            "(bare flag means yes; --no-extracts no re-enables)")

    train = sub.add_parser("train", help="train one stage")
    train.add_argument("stage", choices=("condense", "abstract"))
    train.add_argument("--corpus", required=True)
    train.add_argument("--dev")
    train.add_argument("--checkpoint",
                       help="condense checkpoint (required for the abstract stage)")
    train.add_argument("--out", required=True)
    train.add_argument("--epochs", type=int, default=10)
    train.add_argument("--batch", type=int, default=8)
    train.add_argument("--k", type=int, default=5)
    add_no_extracts(train)

    summarize = sub.add_parser("summarize", help="write one summary per cluster")
    summarize.add_argument("--corpus", required=True)
    summarize.add_argument("--checkpoint", required=True)
    summarize.add_argument("--out", required=True)
    summarize.add_argument("--beam", type=int, default=5)
    summarize.add_argument("--k", type=int, default=5)
    summarize.add_argument("--max-len", dest="max_len", type=int, default=40)
    summarize.add_argument("--workers", type=int, default=1)
    add_no_extracts(summarize)

    customize = sub.add_parser(
        "customize", help="summarize against a need-specific background")
    customize.add_argument("--corpus", required=True)
    customize.add_argument("--checkpoint", required=True)
    customize.add_argument("--out", required=True)
    customize.add_argument("--background", required=True,
                           help="corpus file holding the background reviews")
    customize.add_argument("--need", required=True,
                           help="cluster id of the background set to use")
    customize.add_argument("--beam", type=int, default=5)
    customize.add_argument("--k", type=int, default=5)
    customize.add_argument("--max-len", dest="max_len", type=int, default=40)
    add_no_extracts(customize)

    extract = sub.add_parser("extract", help="write the centroid review per cluster")
    extract.add_argument("--corpus", required=True)
    extract.add_argument("--checkpoint", required=True,
                         help="condense checkpoint for review embeddings")
    extract.add_argument("--out", required=True)
    extract.add_argument("--k", type=int, default=1)

    evaluate = sub.add_parser("evaluate", help="summarize and score against gold")
    evaluate.add_argument("--corpus", required=True)
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--out", required=True, help="metric report file")
    evaluate.add_argument("--beam", type=int, default=5)
    evaluate.add_argument("--k", type=int, default=5)
    evaluate.add_argument("--max-len", dest="max_len", type=int, default=40)
    evaluate.add_argument("--workers", type=int, default=1)
    add_no_extracts(evaluate)

    gentoy = sub.add_parser("gentoy", help="generate a synthetic review corpus")
    gentoy.add_argument("--out", required=True)
    gentoy.add_argument("--clusters", type=int, default=10)
    gentoy.add_argument("--reviews", type=int, default=6)
    gentoy.add_argument("--split", default="train")

    selfcheck = sub.add_parser("selfcheck", help="run the built-in check suites")

    for p in (train, summarize, customize, extract, evaluate, gentoy, selfcheck):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--precision", choices=("float32", "float64"),
                       default="float32")
    return parser


def _load(path: str, what: str) -> Corpus:
    try:
        return load_corpus(path)
    except FileNotFoundError:
        raise CorpusError(f"{what} file not found: {path}")


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    corpus = _load(config.corpus, "corpus")
    dev = _load(config.dev, "dev corpus") if config.dev else None
    if args.stage == "condense":
        vocab = build_vocab(corpus, min_frequency=config.min_frequency)
        model_config = CondenseConfig(
            vocab_size=len(vocab),
            embedding_dim=config.embedding_dim,
            hidden_dim=config.hidden_dim // 2,
            dropout_rate=config.dropout_rate)
        params, log = train_condense(
            corpus, vocab, model_config, epochs=config.epochs,
            seed=config.seed, dev=dev, batch_size=config.batch_size,
            lr=config.learning_rate)
        if log.stopped_early:
            logger.info("condense training stopped early")
        save_condense_checkpoint(config.out, params, vocab)
        logger.info("wrote condense checkpoint to %s", config.out)
        return EXIT_OK

    if not config.checkpoint:
        raise CheckpointError(
            "the abstract stage needs --checkpoint pointing at a trained "
            "condense model; train that stage first")
    try:
        condense_params, vocab, condense_config = load_condense_checkpoint(config.checkpoint)
    except FileNotFoundError:
        raise CheckpointError(
            f"condense checkpoint not found: {config.checkpoint}; "
            "train that stage first")
    model_config = AbstractConfig(
        vocab_size=len(vocab),
        encoding_dim=condense_config.encoding_dim,
        embedding_dim=config.embedding_dim,
        attention_dim=config.hidden_dim,
        use_extracts=bool(config.use_extracts),
        dropout_rate=config.dropout_rate,
        k=config.k)
    params, log = train_abstract(
        corpus, vocab, condense_params, model_config, epochs=config.epochs,
        seed=config.seed, dev=dev, batch_size=config.batch_size,
        lr=config.learning_rate)
    if log.stopped_early:
        logger.info("abstract training stopped early")
    bundle = ModelBundle(vocab=vocab, condense=condense_params, abstract=params,
                         condense_config=condense_config, abstract_config=model_config)
    save_bundle(config.out, bundle)
    logger.info("wrote model bundle to %s", config.out)
    return EXIT_OK


def cmd_summarize(args: argparse.Namespace, config: RunConfig) -> int:
    bundle = load_bundle(config.checkpoint)
    corpus = _load(config.corpus, "corpus")
    results = summarize_corpus(
        corpus, bundle, beam=config.beam, max_len=config.max_len,
        k=config.k, use_extracts=config.use_extracts, workers=config.workers)
    write_summaries(config.out, results)
    return EXIT_OK


def cmd_customize(args: argparse.Namespace, config: RunConfig) -> int:
    bundle = load_bundle(config.checkpoint)
    corpus = _load(config.corpus, "corpus")
    background_corpus = _load(config.background, "background corpus")
    background = BackgroundSet.from_corpus(background_corpus, config.need)
    query = build_query(background, bundle.vocab, bundle.condense)
    results = [summarize_cluster(cluster, bundle, beam=config.beam,
                                 max_len=config.max_len, k=config.k,
                                 use_extracts=config.use_extracts, query=query)
               for cluster in corpus]
    write_summaries(config.out, results)
    return EXIT_OK


def cmd_extract(args: argparse.Namespace, config: RunConfig) -> int:
    condense_params, vocab, _ = load_condense_checkpoint(config.checkpoint)
    corpus = _load(config.corpus, "corpus")
    embedder = CondenseEmbedder(vocab, condense_params)
    with open(config.out, "w", encoding="utf-8") as fh:
        for cluster in corpus:
            k = min(config.k, len(cluster.reviews))
            selection = select_top_k(cluster.reviews, k, embedder)
            fh.write(json.dumps({
                "id": cluster.cluster_id,
                "indices": list(selection.indices),
                "extracts": [cluster.reviews[i].raw_text for i in selection.indices],
            }) + "\n")
    logger.info("wrote extracts for %d clusters to %s", len(corpus), config.out)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    bundle = load_bundle(config.checkpoint)
    corpus = _load(config.corpus, "corpus")
    gold_clusters = [c for c in corpus if c.gold_summary is not None]
    if not gold_clusters:
        raise CorpusError("no cluster in the corpus carries a gold summary")
    scored = Corpus(clusters=tuple(gold_clusters), split=corpus.split)
    results = summarize_corpus(
        scored, bundle, beam=config.beam, max_len=config.max_len,
        k=config.k, use_extracts=config.use_extracts, workers=config.workers)
    report = evaluate_corpus([r.text for r in results], corpus)
    with open(config.out, "w", encoding="utf-8") as fh:
        for line in report.lines():
            fh.write(line + "\n")
        for row in report.per_instance:
            fh.write(json.dumps(row) + "\n")
    for line in report.lines():
        print(line)
    logger.info("wrote metric report to %s", config.out)
    return EXIT_OK


def cmd_gentoy(args: argparse.Namespace, config: RunConfig) -> int:
    corpus = generate_toy_corpus(
        clusters=args.clusters, reviews_per_cluster=args.reviews,
        aspects=TOY_ASPECTS, sentiments=TOY_SENTIMENTS,
        seed=config.seed, split=args.split)
    save_corpus(corpus, config.out)
    logger.info("wrote %d toy clusters to %s", len(corpus), config.out)
    return EXIT_OK


def cmd_selfcheck(args: argparse.Namespace, config: RunConfig) -> int:
    results = run_all(seed=config.seed)
    for result in results:
        print(result.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


_COMMANDS = {
    "train": cmd_train,
    "summarize": cmd_summarize,
    "customize": cmd_customize,
    "extract": cmd_extract,
    "evaluate": cmd_evaluate,
    "gentoy": cmd_gentoy,
    "selfcheck": cmd_selfcheck,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _config_from_args(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    logger.info("resolved config: %s", asdict(config))
    try:
        with precision(config.precision):
            return _COMMANDS[config.command](args, config)
    except (CorpusError, CheckpointError, TensorError, OSError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
