"""Synthetic corpora with planted relevance, so every experiment runs offline.

Topic worlds: each topic owns a rare entity term, content terms that appear
verbatim in grade-2 documents, and synonym twins that replace them in grade-1
documents. Queries name the entity plus content terms, so exact matching
finds grade-2 documents directly while grade-1 documents only match on the
entity (or on click-query text when that field is attached). A filler
vocabulary supplies background noise documents.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .corpus import Document, Query


@dataclass
class SynthSpec:
    num_topics: int = 8
    filler_docs: int = 24
    filler_vocab: int = 30
    seed: int = 0
    with_clicks: bool = False


@dataclass
class SynthData:
    documents: list[Document]
    train_queries: list[Query]
    test_queries: list[Query]
    qrels: dict[tuple[str, str], int]
    clicks: list[tuple[str, str, str]] = field(default_factory=list)


def _fillers(rng: np.random.Generator, spec: SynthSpec, count: int) -> list[str]:
    return [f"filler{int(i):02d}" for i in rng.integers(0, spec.filler_vocab, size=count)]


def synthesize(spec: SynthSpec) -> SynthData:
    rng = np.random.default_rng(spec.seed)
    documents: list[Document] = []
    train_queries: list[Query] = []
    test_queries: list[Query] = []
    qrels: dict[tuple[str, str], int] = {}
    clicks: list[tuple[str, str, str]] = []

    for t in range(spec.num_topics):
        ent = f"ent{t}"
        content = [f"c{t}{ch}" for ch in "abcd"]
        synonyms = [f"s{t}{ch}" for ch in "abcd"]
        train_text = f"{ent} {content[0]} {content[1]}"
        test_text = f"{ent} {content[1]} {content[2]}"
        qid_train, qid_test = f"qt{t}", f"qh{t}"
        train_queries.append(Query(query_id=qid_train, text=train_text))
        test_queries.append(Query(query_id=qid_test, text=test_text))

        for i in range(2):
            doc_id = f"d{t}g2{i}"
            words = [ent] + content[:3] + [content[0], content[1], ent]
            words += _fillers(rng, spec, 6)
            documents.append(
                Document(doc_id=doc_id, title=f"{ent} {content[i]}", body=" ".join(words))
            )
            for qid in (qid_train, qid_test):
                qrels[(qid, doc_id)] = 2
            clicks.append((qid_train, train_text, doc_id))

        for i in range(2):
            doc_id = f"d{t}g1{i}"
            words = [ent] + synonyms[:3] + [synonyms[i]] + _fillers(rng, spec, 6)
            documents.append(Document(doc_id=doc_id, body=" ".join(words)))
            for qid in (qid_train, qid_test):
                qrels[(qid, doc_id)] = 1
            clicks.append((qid_train, train_text, doc_id))

    for i in range(spec.filler_docs):
        words = _fillers(rng, spec, int(rng.integers(8, 15)))
        doc_id = f"f{i:03d}"
        documents.append(Document(doc_id=doc_id, body=" ".join(words)))
        if i < 2 * spec.num_topics:
            qrels[(f"qt{i % spec.num_topics}", doc_id)] = 0

    if spec.with_clicks:
        by_id = {d.doc_id: d for d in documents}
        for _, text, doc_id in clicks:
            by_id[doc_id].click_queries.append(text)

    return SynthData(
        documents=documents,
        train_queries=train_queries,
        test_queries=test_queries,
        qrels=qrels,
        clicks=clicks,
    )


def random_corpus(
    num_docs: int = 1000,
    num_terms: int = 200,
    num_queries: int = 50,
    seed: int = 0,
    min_len: int = 8,
    max_len: int = 40,
) -> tuple[list[Document], list[Query]]:
    """Unlabeled random corpus, zipf-ish term use; for equivalence stress tests."""
    rng = np.random.default_rng(seed)
    terms = [f"t{i:03d}" for i in range(num_terms)]
    weights = 1.0 / np.arange(1, num_terms + 1)
    weights /= weights.sum()
    documents = []
    for i in range(num_docs):
        length = int(rng.integers(min_len, max_len + 1))
        words = rng.choice(num_terms, size=length, p=weights)
        documents.append(Document(doc_id=f"r{i:05d}", body=" ".join(terms[w] for w in words)))
    queries = []
    for i in range(num_queries):
        length = int(rng.integers(2, 5))
        words = rng.choice(num_terms, size=length, replace=False, p=weights)
        queries.append(Query(query_id=f"rq{i:03d}", text=" ".join(terms[w] for w in words)))
    return documents, queries


def write_synth_files(data: SynthData, out_dir: str) -> dict[str, str]:
    """Write docs/queries/qrels/clicks TSVs; returns the path map."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "docs": os.path.join(out_dir, "docs.tsv"),
        "train_queries": os.path.join(out_dir, "queries_train.tsv"),
        "test_queries": os.path.join(out_dir, "queries_test.tsv"),
        "qrels": os.path.join(out_dir, "qrels.txt"),
        "clicks": os.path.join(out_dir, "clicks.tsv"),
    }
    with open(paths["docs"], "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        for d in data.documents:
            w.writerow([d.doc_id, d.url, d.title, d.body])
    for key, queries in (("train_queries", data.train_queries), ("test_queries", data.test_queries)):
        with open(paths[key], "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, delimiter="\t", lineterminator="\n")
            for q in queries:
                w.writerow([q.query_id, q.text])
    with open(paths["qrels"], "w", encoding="utf-8") as f:
        for (qid, doc_id), grade in sorted(data.qrels.items()):
            f.write(f"{qid} 0 {doc_id} {grade}\n")
    with open(paths["clicks"], "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        for qid, text, doc_id in data.clicks:
            w.writerow([qid, text, doc_id])
    return paths
