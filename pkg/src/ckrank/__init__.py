"""Desk-scale conformer-kernel ranking with precomputed impact indexes.

Train NDRM1/2/3 rankers on small corpora, precompute per-term document
impacts into a quantized inverted index, retrieve or rerank, and evaluate
with NDCG@10 / NCG@100 / AP@100 / RR@100. Every variant scores query terms
independently, so full-collection retrieval from the index reproduces
exhaustive per-query scoring exactly (before quantization).
"""

from .checkpoint import checkpoint_digest, load_checkpoint, save_checkpoint
from .corpus import (
    Corpus,
    Document,
    Query,
    Vocabulary,
    build_vocab,
    query_token_ids,
    read_clicks_tsv,
    read_documents_tsv,
    read_queries_tsv,
    tokenize,
)
from .errors import CkError, FormatError
from .evaluation import (
    EvalReport,
    QueryMetrics,
    RunFile,
    average_precision,
    evaluate_run,
    ncg_at,
    ndcg_at,
    read_qrels,
    read_run,
    reciprocal_rank,
    write_run,
)
from .index import (
    ImpactIndex,
    build_index,
    dequantize,
    load_index,
    quantize,
    rerank,
    retrieve,
    save_index,
)
from .model import (
    DocEncoding,
    ModelConfig,
    ModelParams,
    encode_document,
    query_score,
    score_terms,
    set_inference_dtype,
)
from .synth import SynthSpec, random_corpus, synthesize, write_synth_files
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CkError",
    "Corpus",
    "DocEncoding",
    "Document",
    "EvalReport",
    "FormatError",
    "ImpactIndex",
    "ModelConfig",
    "ModelParams",
    "Query",
    "QueryMetrics",
    "RunFile",
    "SynthSpec",
    "TrainConfig",
    "Vocabulary",
    "average_precision",
    "build_index",
    "build_vocab",
    "checkpoint_digest",
    "dequantize",
    "encode_document",
    "evaluate_run",
    "load_checkpoint",
    "load_index",
    "ncg_at",
    "ndcg_at",
    "quantize",
    "query_score",
    "query_token_ids",
    "random_corpus",
    "read_clicks_tsv",
    "read_documents_tsv",
    "read_qrels",
    "read_queries_tsv",
    "read_run",
    "reciprocal_rank",
    "rerank",
    "retrieve",
    "save_checkpoint",
    "save_index",
    "score_terms",
    "set_inference_dtype",
    "synthesize",
    "tokenize",
    "train",
    "write_run",
    "write_synth_files",
    "__version__",
]
