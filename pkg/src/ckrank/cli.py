"""Command-line pipeline: train a model, build an impact index, search it,
rerank candidate lists, and score run files against judgments.

Exit codes: 0 success, 1 domain error (empty corpus, non-finite training,
unknown documents, ...), 2 usage or input-format error. Every subcommand
validates its inputs before writing any output, and all file writes are
atomic, so a failed invocation leaves no partial artifacts.

Flags may also be supplied through ``--config FILE`` holding ``key=value``
lines (keys are flag names without the leading dashes); explicit flags win.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checkpoint import checkpoint_digest, load_checkpoint, save_checkpoint
from .corpus import (
    Corpus,
    build_vocab,
    query_token_ids,
    read_clicks_tsv,
    read_documents_tsv,
    read_queries_tsv,
)
from .errors import CkError, FormatError
from .evaluation import RunFile, evaluate_run, read_qrels, read_run, write_run
from .index import build_index, load_index, rerank, retrieve, save_index
from .model import ModelConfig, set_inference_dtype
from .synth import SynthSpec, synthesize, write_synth_files
from .training import TrainConfig, train

PROG = "ckrank"


class CliConfig(argparse.Namespace):
    """Resolved options for one invocation: subcommand, input and output
    paths, model variant, expansion mode, k, seed, and report path. The
    parser enforces required paths per subcommand and numeric bounds."""


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def _load_config_file(path: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise FormatError("expected key=value", path=path, line=lineno)
            key, _, value = stripped.partition("=")
            pairs[key.strip().replace("_", "-")] = value.strip()
    return pairs


_TRUE_WORDS = {"1", "true", "yes", "on"}
_FALSE_WORDS = {"0", "false", "no", "off"}
_BOOLEAN_FLAGS = {"f64", "with-clicks"}


def _merge_config_file(argv: list[str]) -> list[str]:
    """Append config-file pairs as flags after the subcommand; given flags win."""
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    if at + 1 >= len(argv):
        return argv  # the parser will report the missing value
    path = argv[at + 1]
    pairs = _load_config_file(path)
    merged = list(argv)
    given = {tok.split("=", 1)[0] for tok in argv if tok.startswith("--")}
    for key, value in pairs.items():
        flag = f"--{key}"
        if flag in given:
            continue
        if key in _BOOLEAN_FLAGS:
            lowered = value.lower()
            if lowered not in _TRUE_WORDS | _FALSE_WORDS:
                raise FormatError(f"{key} expects a boolean, got {value!r}", path=path)
            if lowered in _TRUE_WORDS:
                merged.append(flag)
        else:
            merged.extend([flag, value])
    return merged


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Train, index, search, rerank, and evaluate impact-indexed rankers.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="COMMAND")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file supplying defaults for any flag")

    corpus_args = argparse.ArgumentParser(add_help=False)
    corpus_args.add_argument("--docs", required=True, help="documents TSV (doc_id, url, title, body)")
    corpus_args.add_argument("--clicks", help="optional clicks TSV (query_id, query_text, doc_id)")
    corpus_args.add_argument("--min-df", type=_positive_int, default=2,
                             help="drop terms appearing in fewer documents (default 2); "
                                  "term ids depend on it, so reuse the training value "
                                  "for index, search, and rerank")

    p_train = sub.add_parser("train", parents=[common, corpus_args],
                             help="train a model and write a checkpoint")
    p_train.add_argument("--queries", required=True, help="training queries TSV (query_id, text)")
    p_train.add_argument("--qrels", required=True, help="judgments: query_id 0 doc_id grade")
    p_train.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p_train.add_argument("--loss-csv", help="optional per-epoch loss CSV output")
    p_train.add_argument("--variant", choices=("NDRM1", "NDRM2", "NDRM3"), default="NDRM3")
    p_train.add_argument("--epochs", type=_nonneg_int, default=5)
    p_train.add_argument("--batch-size", type=_positive_int, default=8)
    p_train.add_argument("--lr", type=float, default=1e-3)
    p_train.add_argument("--negatives", type=_positive_int, default=1,
                         help="negatives sampled per positive")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--embed-dim", type=_positive_int, default=64)
    p_train.add_argument("--d-key", type=_positive_int, default=64)
    p_train.add_argument("--d-value", type=_positive_int, default=64)
    p_train.add_argument("--num-layers", type=_nonneg_int, default=2)
    p_train.add_argument("--conv-window", type=_positive_int, default=7)
    p_train.add_argument("--ffn-dim", type=_positive_int, default=128)
    p_train.add_argument("--max-doc-len", type=_positive_int, default=1024)
    p_train.add_argument("--max-query-len", type=_positive_int, default=20)

    p_index = sub.add_parser("index", parents=[common, corpus_args],
                             help="precompute per-term impacts into an index file")
    p_index.add_argument("--checkpoint", required=True, help="trained model checkpoint")
    p_index.add_argument("--out", required=True, help="output index path")
    p_index.add_argument("--mode", choices=("own", "full"), default="own",
                         help="score only a document's own terms, or the whole vocabulary")
    p_index.add_argument("--tau", type=float, default=0.0, help="drop impacts <= tau")
    p_index.add_argument("--variant", choices=("NDRM1", "NDRM2", "NDRM3"),
                         help="override the checkpoint's scoring variant")
    p_index.add_argument("--threads", type=_positive_int, default=1)
    p_index.add_argument("--f64", action="store_true", help="score in float64 (verification)")

    p_search = sub.add_parser("search", parents=[common, corpus_args],
                              help="rank the whole collection from an index")
    p_search.add_argument("--index", required=True, dest="index_path", help="index file")
    p_search.add_argument("--queries", required=True, help="queries TSV (query_id, text)")
    p_search.add_argument("--out", required=True, help="output run file")
    p_search.add_argument("--k", type=_positive_int, default=100, help="results per query")
    p_search.add_argument("--max-query-len", type=_positive_int, default=20)
    p_search.add_argument("--tag", default="ckrank")

    p_rerank = sub.add_parser("rerank", parents=[common, corpus_args],
                              help="rescore provided candidates with the live model")
    p_rerank.add_argument("--checkpoint", required=True, help="trained model checkpoint")
    p_rerank.add_argument("--queries", required=True, help="queries TSV (query_id, text)")
    p_rerank.add_argument("--candidates", required=True,
                          help="candidate file: query_id<TAB>doc_id per line")
    p_rerank.add_argument("--out", required=True, help="output run file")
    p_rerank.add_argument("--k", type=_positive_int, default=100, help="results per query")
    p_rerank.add_argument("--variant", choices=("NDRM1", "NDRM2", "NDRM3"),
                          help="override the checkpoint's scoring variant")
    p_rerank.add_argument("--tag", default="ckrank")
    p_rerank.add_argument("--f64", action="store_true", help="score in float64 (verification)")

    p_eval = sub.add_parser("eval", parents=[common], help="score a run file against judgments")
    p_eval.add_argument("--run", required=True, help="run file to evaluate")
    p_eval.add_argument("--qrels", required=True, help="judgments: query_id 0 doc_id grade")
    p_eval.add_argument("--report", help="write the metrics CSV here instead of stdout")

    p_synth = sub.add_parser("synth", parents=[common],
                             help="generate the bundled synthetic corpus")
    p_synth.add_argument("--out-dir", required=True)
    p_synth.add_argument("--topics", type=_positive_int, default=8)
    p_synth.add_argument("--filler-docs", type=_nonneg_int, default=24)
    p_synth.add_argument("--filler-vocab", type=_positive_int, default=30)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--with-clicks", action="store_true",
                         help="attach click queries to judged documents")
    return parser


def _read_corpus(args, max_doc_len: int) -> Corpus:
    documents = read_documents_tsv(args.docs)
    if args.clicks:
        read_clicks_tsv(args.clicks, documents)
    return Corpus.build(documents, min_df=args.min_df, max_doc_len=max_doc_len)


def _load_model(args):
    """Checkpoint params plus the corpus rebuilt to the checkpoint's limits."""
    params = load_checkpoint(args.checkpoint)
    corpus = _read_corpus(args, params.config.max_doc_len)
    if corpus.vocab.size != params.arrays["embedding"].shape[0]:
        raise CkError(
            f"checkpoint expects a vocabulary of {params.arrays['embedding'].shape[0]} "
            f"terms but the corpus built {corpus.vocab.size}; "
            "use the same documents and --min-df as at training time"
        )
    return params, corpus


def _read_candidates(path: str) -> dict[str, list[str]]:
    by_query: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.rstrip("\n")
            if not stripped:
                continue
            fields = stripped.split("\t")
            if len(fields) != 2:
                raise FormatError(
                    f"expected 'query_id<TAB>doc_id', got {len(fields)} fields",
                    path=path,
                    line=lineno,
                )
            by_query.setdefault(fields[0], []).append(fields[1])
    return by_query


def _cmd_train(args) -> int:
    model_config = ModelConfig(
        embed_dim=args.embed_dim,
        d_key=args.d_key,
        d_value=args.d_value,
        num_layers=args.num_layers,
        conv_window=args.conv_window,
        ffn_dim=args.ffn_dim,
        max_doc_len=args.max_doc_len,
        max_query_len=args.max_query_len,
        variant=args.variant,
    )
    corpus = _read_corpus(args, model_config.max_doc_len)
    queries = read_queries_tsv(args.queries)
    qrels = read_qrels(args.qrels)
    train_config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        negatives_per_positive=args.negatives,
        learning_rate=args.lr,
        checkpoint_path=args.checkpoint,
    )
    params, history = train(corpus, queries, qrels, model_config, train_config)
    digest = save_checkpoint(args.checkpoint, params)
    if args.loss_csv:
        rows = ["epoch,mean_loss"]
        rows += [f"{i},{loss:.6f}" for i, loss in enumerate(history, start=1)]
        _atomic_write_text(args.loss_csv, "\n".join(rows) + "\n")
    print(f"saved checkpoint {args.checkpoint} (sha256 {digest[:12]})")
    for i, loss in enumerate(history, start=1):
        print(f"epoch {i}: mean loss {loss:.6f}")
    return 0


def _cmd_index(args) -> int:
    if args.f64:
        set_inference_dtype(np.float64)
    params, corpus = _load_model(args)
    index = build_index(
        corpus,
        params,
        expansion_mode=args.mode,
        tau=args.tau,
        variant=args.variant,
        quantized=True,
        model_digest=checkpoint_digest(args.checkpoint),
        threads=args.threads,
    )
    save_index(args.out, index)
    postings = sum(len(p.refs) for p in index.postings.values())
    print(f"indexed {index.num_docs} documents, {index.num_terms} terms, {postings} postings")
    return 0


def _cmd_search(args) -> int:
    # term ids in the index refer to the vocabulary built from the documents,
    # so the same corpus (and --min-df) must be supplied here
    index = load_index(args.index_path)
    documents = read_documents_tsv(args.docs)
    if args.clicks:
        read_clicks_tsv(args.clicks, documents)
    vocab = build_vocab(documents, min_df=args.min_df)
    queries = read_queries_tsv(args.queries)
    if index.num_docs != len(documents):
        raise CkError(
            f"index holds {index.num_docs} documents but the corpus has {len(documents)}"
        )
    run = RunFile(entries={}, tag=args.tag)
    for query in queries:
        ids = query_token_ids(vocab, query.text, args.max_query_len)
        run.entries[query.query_id] = retrieve(index, ids, k=args.k)
    write_run(args.out, run)
    print(f"wrote {args.out} ({len(queries)} queries, k={args.k})")
    return 0


def _cmd_rerank(args) -> int:
    if args.f64:
        set_inference_dtype(np.float64)
    params, corpus = _load_model(args)
    queries = read_queries_tsv(args.queries)
    by_id = {q.query_id: q for q in queries}
    candidates = _read_candidates(args.candidates)
    for query_id in candidates:
        if query_id not in by_id:
            raise CkError(f"candidate file names query {query_id!r} missing from {args.queries}")
    encodings: dict = {}
    run = RunFile(entries={}, tag=args.tag)
    for query in queries:
        docs = candidates.get(query.query_id)
        if not docs:
            continue
        ids = query_token_ids(corpus.vocab, query.text, params.config.max_query_len)
        ranked = rerank(params, corpus, ids, docs, variant=args.variant, encodings=encodings)
        run.entries[query.query_id] = ranked[: args.k]
    write_run(args.out, run)
    print(f"wrote {args.out} ({len(run.entries)} queries)")
    return 0


def _cmd_eval(args) -> int:
    run = read_run(args.run)
    qrels = read_qrels(args.qrels)
    report = evaluate_run(run, qrels)
    text = report.to_csv()
    if args.report:
        _atomic_write_text(args.report, text)
        print(f"wrote {args.report} ({len(report.per_query)} queries)")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_synth(args) -> int:
    spec = SynthSpec(
        num_topics=args.topics,
        filler_docs=args.filler_docs,
        filler_vocab=args.filler_vocab,
        seed=args.seed,
        with_clicks=args.with_clicks,
    )
    paths = write_synth_files(synthesize(spec), args.out_dir)
    for name in sorted(paths):
        print(f"{name}: {paths[name]}")
    return 0


_HANDLERS = {
    "train": _cmd_train,
    "index": _cmd_index,
    "search": _cmd_search,
    "rerank": _cmd_rerank,
    "eval": _cmd_eval,
    "synth": _cmd_synth,
}


def dispatch(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        argv = _merge_config_file(argv)
        args = parser.parse_args(argv, namespace=CliConfig())
        handler = _HANDLERS[args.subcommand]
        return handler(args)
    except SystemExit as exc:  # argparse usage errors and --help
        code = exc.code if isinstance(exc.code, int) else 2
        return code
    except FormatError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except CkError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())
