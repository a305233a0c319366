"""Quantized impact index: precomputed per-term document scores served as an
inverted index, plus fullrank retrieval and candidate reranking.

Because every model variant scores query terms independently, summing stored
impacts reproduces live query scoring exactly (before quantization): the
accumulation below adds float64 values in query-token order, mirroring
query_score term for term.

Index file format, magic "CKIX", little-endian: header (magic, version u32,
term count u32, doc count u32, model digest 32 bytes, expansion mode u8,
variant u8, tau f32); doc-id table (u16 length + utf-8 per doc, ref = table
position); per term in ascending id order: term id u32, scale f32, posting
count u32, then postings as (varint delta-encoded doc ref, u8 impact level).
Only quantized indexes are written to disk.
"""

from __future__ import annotations

import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .corpus import FIRST_TERM_ID, Corpus, Document
from .errors import EmptyCorpus, FormatError, NonPositiveImpact, UnknownDocument
from .model import DocEncoding, ModelParams, encode_document, query_score, score_terms, scoreable_query_ids

INDEX_MAGIC = b"CKIX"
INDEX_VERSION = 1

EXPANSION_MODES = ("own", "full")


def quantize(impact: float, term_max: float) -> int:
    """8-bit level: round-half-up of 255*impact/term_max, clamped to [1, 255]."""
    if impact <= 0 or term_max <= 0:
        raise NonPositiveImpact(f"impact {impact} with term max {term_max}")
    level = math.floor(255.0 * impact / term_max + 0.5)
    return min(255, max(1, level))


def dequantize(level: int, term_max: float) -> float:
    return level * (term_max / 255.0)


@dataclass
class TermPostings:
    refs: np.ndarray  # int64, strictly ascending doc refs
    levels: np.ndarray  # uint8 levels, or float32 raw impacts when unquantized
    scale: float  # stored verbatim in the file; 1.0 when unquantized

    def impacts(self) -> np.ndarray:
        """Dequantized float64 impacts, aligned with refs."""
        return self.levels.astype(np.float64) * float(self.scale)


@dataclass
class ImpactIndex:
    doc_ids: list[str]
    postings: dict[int, TermPostings]
    model_digest: bytes = b"\x00" * 32
    expansion_mode: str = "own"
    tau: float = 0.0
    variant: str = "NDRM3"
    quantized: bool = True

    @property
    def num_docs(self) -> int:
        return len(self.doc_ids)

    @property
    def num_terms(self) -> int:
        return len(self.postings)


def _candidate_terms(document: Document, vocab_size: int, expansion_mode: str) -> np.ndarray:
    if expansion_mode == "full":
        return np.arange(FIRST_TERM_ID, vocab_size, dtype=np.int64)
    return np.array(sorted(document.term_counts()), dtype=np.int64)


def score_document_terms(
    document: Document,
    params: ModelParams,
    corpus: Corpus,
    expansion_mode: str = "own",
    tau: float = 0.0,
    variant: str | None = None,
) -> dict[int, float]:
    """Per-term impacts above tau for one document; one encoding, all terms."""
    if expansion_mode not in EXPANSION_MODES:
        raise ValueError(f"expansion_mode must be one of {EXPANSION_MODES}")
    candidates = _candidate_terms(document, corpus.vocab.size, expansion_mode)
    if candidates.size == 0:
        return {}
    enc = encode_document(document.tokens, params)
    scores = score_terms(params, corpus.vocab, document, candidates, variant=variant, enc=enc)
    return {int(t): float(s) for t, s in zip(candidates, scores) if s > tau}


def build_index(
    corpus: Corpus,
    params: ModelParams,
    expansion_mode: str = "own",
    tau: float = 0.0,
    variant: str | None = None,
    quantized: bool = True,
    model_digest: bytes = b"\x00" * 32,
    threads: int = 1,
) -> ImpactIndex:
    """Score every document, invert, quantize. Deterministic given inputs;
    document scoring parallelizes over threads with an ordered merge."""
    if len(corpus) == 0:
        raise EmptyCorpus("cannot index an empty corpus")
    if tau < 0:
        raise ValueError("tau must be >= 0")
    variant = variant or params.config.variant

    def score_one(doc: Document) -> dict[int, float]:
        return score_document_terms(doc, params, corpus, expansion_mode, tau, variant)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_doc = list(pool.map(score_one, corpus.documents))
    else:
        per_doc = [score_one(doc) for doc in corpus.documents]

    inverted: dict[int, list[tuple[int, float]]] = {}
    for ref, impacts in enumerate(per_doc):
        for tid, impact in impacts.items():
            inverted.setdefault(tid, []).append((ref, impact))

    postings: dict[int, TermPostings] = {}
    for tid in sorted(inverted):
        entries = inverted[tid]  # already ascending by ref
        refs = np.array([r for r, _ in entries], dtype=np.int64)
        raw = np.array([v for _, v in entries], dtype=np.float32)
        if quantized:
            term_max = float(raw.max())
            scale = float(np.float32(term_max / 255.0))
            levels = np.array([quantize(float(v), term_max) for v in raw], dtype=np.uint8)
            postings[tid] = TermPostings(refs=refs, levels=levels, scale=scale)
        else:
            postings[tid] = TermPostings(refs=refs, levels=raw, scale=1.0)

    return ImpactIndex(
        doc_ids=[d.doc_id for d in corpus.documents],
        postings=postings,
        model_digest=model_digest,
        expansion_mode=expansion_mode,
        tau=tau,
        variant=variant,
        quantized=quantized,
    )


def _ranked(pairs: list[tuple[str, float]]) -> list[tuple[str, float]]:
    """Descending score, ties broken by doc_id descending."""
    return sorted(pairs, key=lambda p: (p[1], p[0]), reverse=True)


def retrieve(index: ImpactIndex, query_token_ids, k: int = 100) -> list[tuple[str, float]]:
    """Top-k by summed impacts over query token occurrences.

    Unknown query terms contribute nothing; only documents with positive
    score are returned, so fewer than k results means the index ran dry.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    acc = np.zeros(index.num_docs, dtype=np.float64)
    for tid in scoreable_query_ids(query_token_ids):
        plist = index.postings.get(tid)
        if plist is None:
            continue
        np.add.at(acc, plist.refs, plist.impacts())
    hit = np.nonzero(acc > 0.0)[0]
    ranked = _ranked([(index.doc_ids[ref], float(acc[ref])) for ref in hit])
    return ranked[:k]


def rerank(
    params: ModelParams,
    corpus: Corpus,
    query_token_ids,
    candidate_doc_ids: list[str],
    variant: str | None = None,
    encodings: dict[str, DocEncoding] | None = None,
) -> list[tuple[str, float]]:
    """Exact (unquantized) query scores over candidates, same tie rule.

    Pass `encodings` to reuse document encodings across queries.
    """
    missing = [d for d in candidate_doc_ids if d not in corpus.by_id]
    if missing:
        raise UnknownDocument(f"candidates not in corpus: {', '.join(sorted(set(missing)))}")
    seen: set[str] = set()
    unique = [d for d in candidate_doc_ids if not (d in seen or seen.add(d))]
    scored = []
    for doc_id in unique:
        doc = corpus.by_id[doc_id]
        enc = encodings.get(doc_id) if encodings is not None else None
        if enc is None and encodings is not None:
            enc = encodings[doc_id] = encode_document(doc.tokens, params)
        score = query_score(query_token_ids, doc, params, corpus.vocab, variant=variant, enc=enc)
        scored.append((doc_id, score))
    return _ranked(scored)


# ---------------------------------------------------------------------------
# serialization

def _write_varint(out: bytearray, value: int) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def serialize_index(index: ImpactIndex) -> bytes:
    if not index.quantized:
        raise ValueError("only quantized indexes are written to disk")
    out = bytearray()
    out += INDEX_MAGIC
    out += struct.pack(
        "<III", INDEX_VERSION, index.num_terms, index.num_docs
    )
    if len(index.model_digest) != 32:
        raise ValueError("model digest must be 32 bytes")
    out += index.model_digest
    out += struct.pack(
        "<BBf", EXPANSION_MODES.index(index.expansion_mode),
        0 if index.variant == "NDRM1" else (1 if index.variant == "NDRM2" else 2),
        index.tau,
    )
    for doc_id in index.doc_ids:
        raw = doc_id.encode("utf-8")
        out += struct.pack("<H", len(raw))
        out += raw
    for tid in sorted(index.postings):
        plist = index.postings[tid]
        out += struct.pack("<IfI", tid, plist.scale, len(plist.refs))
        prev = -1
        for ref, level in zip(plist.refs, plist.levels):
            _write_varint(out, int(ref) - prev - 1)
            out.append(int(level))
            prev = int(ref)
    return bytes(out)


def save_index(path: str, index: ImpactIndex) -> None:
    blob = serialize_index(index)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise FormatError("truncated index", path=self.path)
        chunk = self.blob[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def varint(self) -> int:
        shift = 0
        value = 0
        while True:
            byte = self.take(1)[0]
            value |= (byte & 0x7F) << shift
            if not byte & 0x80:
                return value
            shift += 7
            if shift > 63:
                raise FormatError("varint too long", path=self.path)


def load_index(path: str) -> ImpactIndex:
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob, path)
    if r.take(4) != INDEX_MAGIC:
        raise FormatError(f"bad magic, expected {INDEX_MAGIC!r}", path=path)
    version, num_terms, num_docs = struct.unpack("<III", r.take(12))
    if version != INDEX_VERSION:
        raise FormatError(f"index version {version}, expected {INDEX_VERSION}", path=path)
    digest = r.take(32)
    mode_idx, variant_idx, tau = struct.unpack("<BBf", r.take(6))
    if mode_idx >= len(EXPANSION_MODES):
        raise FormatError(f"unknown expansion mode {mode_idx}", path=path)
    if variant_idx >= 3:
        raise FormatError(f"unknown variant code {variant_idx}", path=path)
    doc_ids = []
    for _ in range(num_docs):
        (n,) = struct.unpack("<H", r.take(2))
        doc_ids.append(r.take(n).decode("utf-8"))
    postings: dict[int, TermPostings] = {}
    for _ in range(num_terms):
        tid, scale, count = struct.unpack("<IfI", r.take(12))
        refs = np.zeros(count, dtype=np.int64)
        levels = np.zeros(count, dtype=np.uint8)
        prev = -1
        for i in range(count):
            prev = prev + 1 + r.varint()
            refs[i] = prev
            levels[i] = r.take(1)[0]
            if prev >= num_docs:
                raise FormatError(f"doc ref {prev} out of range", path=path)
        postings[tid] = TermPostings(refs=refs, levels=levels, scale=float(scale))
    if r.offset != len(blob):
        raise FormatError(f"{len(blob) - r.offset} trailing bytes", path=path)
    return ImpactIndex(
        doc_ids=doc_ids,
        postings=postings,
        model_digest=digest,
        expansion_mode=EXPANSION_MODES[mode_idx],
        tau=float(tau),
        variant=("NDRM1", "NDRM2", "NDRM3")[variant_idx],
        quantized=True,
    )
