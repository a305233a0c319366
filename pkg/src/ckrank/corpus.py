"""Corpus ingestion: tokenization, vocabulary construction, field flattening.

Documents arrive as TSV rows (doc_id, url, title, body) plus an optional
ORCAS-style click log whose queries become an extra description field.
All model input is a single flat id sequence per document; fields are
joined with one PAD id between non-empty blocks.
"""

from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass, field

from .errors import EmptyCorpus, FormatError

PAD_ID = 0
UNK_ID = 1
FIRST_TERM_ID = 2

DEFAULT_MIN_DF = 2
DEFAULT_MAX_DOC_LEN = 1024
DEFAULT_MAX_QUERY_LEN = 20


def _strip_punct(piece: str) -> str:
    start, end = 0, len(piece)
    while start < end and unicodedata.category(piece[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(piece[end - 1]).startswith("P"):
        end -= 1
    return piece[start:end]


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation, drop empties."""
    out = []
    for piece in text.lower().split():
        piece = _strip_punct(piece)
        if piece:
            out.append(piece)
    return out


@dataclass
class Document:
    doc_id: str
    url: str = ""
    title: str = ""
    body: str = ""
    click_queries: list[str] = field(default_factory=list)
    tokens: list[int] = field(default_factory=list)
    _counts: dict[int, int] | None = None

    def term_counts(self) -> dict[int, int]:
        """Counts of every non-PAD id in the flattened sequence."""
        if self._counts is None:
            counts: dict[int, int] = {}
            for t in self.tokens:
                if t != PAD_ID:
                    counts[t] = counts.get(t, 0) + 1
            self._counts = counts
        return self._counts

    @property
    def length(self) -> int:
        """Number of non-PAD tokens (field separators excluded)."""
        return sum(self.term_counts().values())


@dataclass
class Query:
    query_id: str
    text: str
    tokens: list[int] = field(default_factory=list)


@dataclass
class Vocabulary:
    """Term/id map with the collection statistics the exact-match scorer needs.

    Ids are contiguous starting at 2; 0 is PAD, 1 is UNK. ``avgdl`` is the
    mean non-PAD length of the flattened, truncated documents.
    """

    term_to_id: dict[str, int]
    df: dict[str, int]
    num_docs: int
    avgdl: float

    @property
    def size(self) -> int:
        """Number of embedding rows: stored terms plus PAD and UNK."""
        return len(self.term_to_id) + FIRST_TERM_ID

    def id_of(self, term: str) -> int:
        return self.term_to_id.get(term, UNK_ID)

    def term_of(self, term_id: int) -> str | None:
        if not hasattr(self, "_id_to_term"):
            self._id_to_term = {i: t for t, i in self.term_to_id.items()}
        return self._id_to_term.get(term_id)


def idf(vocab: Vocabulary, term: str) -> float:
    """Always-positive BM25-style idf; unknown terms get df = 0."""
    d = vocab.df.get(term, 0)
    return math.log(1.0 + (vocab.num_docs - d + 0.5) / (d + 0.5))


def _field_blocks(doc: Document) -> list[list[str]]:
    blocks = [tokenize(doc.url), tokenize(doc.title), tokenize(doc.body)]
    blocks.extend(tokenize(q) for q in doc.click_queries)
    return [b for b in blocks if b]


def flatten(doc: Document, vocab: Vocabulary, max_doc_len: int = DEFAULT_MAX_DOC_LEN) -> list[int]:
    """Concatenate url, title, body, then click queries, one PAD between blocks."""
    ids: list[int] = []
    for i, block in enumerate(_field_blocks(doc)):
        if i > 0:
            ids.append(PAD_ID)
        ids.extend(vocab.term_to_id.get(t, UNK_ID) for t in block)
    return ids[:max_doc_len]


def build_vocab(
    documents: list[Document],
    min_df: int = DEFAULT_MIN_DF,
    max_doc_len: int = DEFAULT_MAX_DOC_LEN,
) -> Vocabulary:
    """Count document frequencies over all fields and keep terms with df >= min_df."""
    if not documents:
        raise EmptyCorpus("cannot build a vocabulary from zero documents")
    df: dict[str, int] = {}
    for doc in documents:
        seen = set()
        for block in _field_blocks(doc):
            seen.update(block)
        for t in seen:
            df[t] = df.get(t, 0) + 1
    kept = sorted(t for t, d in df.items() if d >= min_df)
    vocab = Vocabulary(
        term_to_id={t: FIRST_TERM_ID + i for i, t in enumerate(kept)},
        df={t: df[t] for t in kept},
        num_docs=len(documents),
        avgdl=0.0,
    )
    total = 0
    for doc in documents:
        ids = flatten(doc, vocab, max_doc_len)
        total += sum(1 for t in ids if t != PAD_ID)
    vocab.avgdl = total / len(documents)
    return vocab


def query_token_ids(vocab: Vocabulary, text: str, max_query_len: int = DEFAULT_MAX_QUERY_LEN) -> list[int]:
    return [vocab.term_to_id.get(t, UNK_ID) for t in tokenize(text)[:max_query_len]]


class Corpus:
    """Documents with a built vocabulary and flattened token sequences."""

    def __init__(self, documents: list[Document], vocab: Vocabulary):
        self.documents = documents
        self.vocab = vocab
        self.by_id = {d.doc_id: d for d in documents}

    @classmethod
    def build(
        cls,
        documents: list[Document],
        min_df: int = DEFAULT_MIN_DF,
        max_doc_len: int = DEFAULT_MAX_DOC_LEN,
    ) -> "Corpus":
        vocab = build_vocab(documents, min_df=min_df, max_doc_len=max_doc_len)
        for doc in documents:
            doc.tokens = flatten(doc, vocab, max_doc_len)
            doc._counts = None
        return cls(documents, vocab)

    def __len__(self) -> int:
        return len(self.documents)


def read_documents_tsv(path: str) -> list[Document]:
    """Parse `doc_id<TAB>url<TAB>title<TAB>body` lines; body may contain tabs."""
    docs: list[Document] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 3)
            if len(parts) != 4:
                raise FormatError(
                    f"expected 4 tab-separated fields, got {len(parts)}", path, lineno
                )
            doc_id, url, title, body = parts
            if not doc_id:
                raise FormatError("empty doc_id", path, lineno)
            if doc_id in seen:
                raise FormatError(f"duplicate doc_id {doc_id!r}", path, lineno)
            seen.add(doc_id)
            docs.append(Document(doc_id=doc_id, url=url, title=title, body=body))
    return docs


def read_clicks_tsv(path: str, documents: list[Document]) -> int:
    """Join `query_id<TAB>query_text<TAB>doc_id` click rows onto documents.

    Rows whose doc_id is not in the corpus are skipped. Returns the number
    of click queries attached.
    """
    by_id = {d.doc_id: d for d in documents}
    attached = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(
                    f"expected 3 tab-separated fields, got {len(parts)}", path, lineno
                )
            _, query_text, doc_id = parts
            doc = by_id.get(doc_id)
            if doc is not None:
                doc.click_queries.append(query_text)
                attached += 1
    return attached


def read_queries_tsv(path: str) -> list[Query]:
    """Parse `query_id<TAB>text` lines."""
    queries: list[Query] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise FormatError(
                    f"expected 2 tab-separated fields, got {len(parts)}", path, lineno
                )
            query_id, text = parts
            if not query_id:
                raise FormatError("empty query_id", path, lineno)
            queries.append(Query(query_id=query_id, text=text))
    return queries
