"""Rank metrics (NDCG@10, NCG@100, AP@100, RR@100), TREC-style run and qrels
files, and per-query evaluation reports.

NDCG uses linear gain with a log2(rank+1) discount; NCG is the undiscounted
sum. AP and RR binarize at a configurable grade threshold (default 1). Every
ranking is re-sorted by (score descending, doc_id descending) before scoring,
so only score order matters, never file order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import FormatError

Qrels = dict[tuple[str, str], int]

DEFAULT_CUTOFF = 100
DEFAULT_NDCG_CUTOFF = 10
DEFAULT_THRESHOLD = 1


def _dcg(grades: list[int], k: int) -> float:
    return sum(g / math.log2(i + 2) for i, g in enumerate(grades[:k]))


def ndcg_at(ranking_grades: list[int], ideal_grades: list[int], k: int) -> float:
    """Discounted gain of the ranking over the best possible ordering of all
    judged grades; 0 when nothing relevant is judged."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ideal = _dcg(sorted(ideal_grades, reverse=True), k)
    if ideal <= 0:
        return 0.0
    return _dcg(ranking_grades, k) / ideal


def ncg_at(ranking_grades: list[int], ideal_grades: list[int], k: int) -> float:
    """Undiscounted: sum of top-k grades over the ideal top-k sum."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ideal = sum(sorted(ideal_grades, reverse=True)[:k])
    if ideal <= 0:
        return 0.0
    return sum(ranking_grades[:k]) / ideal


def average_precision(
    ranking: list[str],
    grades: dict[str, int],
    k: int = DEFAULT_CUTOFF,
    binarize_threshold: int = DEFAULT_THRESHOLD,
) -> float:
    """Sum of precision at each relevant retrieved rank (within k), divided by
    the query's total number of relevant documents."""
    total_relevant = sum(1 for g in grades.values() if g >= binarize_threshold)
    if total_relevant == 0:
        return 0.0
    hits = 0
    score = 0.0
    for i, doc_id in enumerate(ranking[:k], start=1):
        if grades.get(doc_id, 0) >= binarize_threshold:
            hits += 1
            score += hits / i
    return score / total_relevant


def reciprocal_rank(
    ranking: list[str],
    grades: dict[str, int],
    k: int = DEFAULT_CUTOFF,
    binarize_threshold: int = DEFAULT_THRESHOLD,
) -> float:
    """1/rank of the first relevant document within the top k, else 0."""
    for i, doc_id in enumerate(ranking[:k], start=1):
        if grades.get(doc_id, 0) >= binarize_threshold:
            return 1.0 / i
    return 0.0


@dataclass
class RunFile:
    """Per-query rankings in rank order, with the producing system's tag."""

    entries: dict[str, list[tuple[str, float]]] = field(default_factory=dict)
    tag: str = "ckrank"


def write_run(path: str, run: RunFile) -> None:
    lines = []
    for query_id, ranking in run.entries.items():
        for rank, (doc_id, score) in enumerate(ranking, start=1):
            lines.append(f"{query_id} Q0 {doc_id} {rank} {score:.6f} {run.tag}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + ("\n" if lines else ""))


def read_run(path: str) -> RunFile:
    run = RunFile(entries={})
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 6:
                raise FormatError(
                    f"expected 6 fields 'query_id Q0 doc_id rank score tag', got {len(fields)}",
                    path=path,
                    line=lineno,
                )
            query_id, _, doc_id, rank_s, score_s, tag = fields
            try:
                int(rank_s)
                score = float(score_s)
            except ValueError:
                raise FormatError(
                    f"non-numeric rank or score: {rank_s!r} {score_s!r}", path=path, line=lineno
                ) from None
            run.entries.setdefault(query_id, []).append((doc_id, score))
            run.tag = tag
    return run


def read_qrels(path: str) -> Qrels:
    """Whitespace-separated `query_id 0 doc_id grade`, one judgment per pair."""
    qrels: Qrels = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 4:
                raise FormatError(
                    f"expected 4 fields 'query_id 0 doc_id grade', got {len(fields)}",
                    path=path,
                    line=lineno,
                )
            query_id, _, doc_id, grade_s = fields
            try:
                grade = int(grade_s)
            except ValueError:
                raise FormatError(f"non-integer grade {grade_s!r}", path=path, line=lineno) from None
            if grade < 0:
                raise FormatError(f"negative grade {grade}", path=path, line=lineno)
            if (query_id, doc_id) in qrels:
                raise FormatError(
                    f"duplicate judgment for ({query_id}, {doc_id})", path=path, line=lineno
                )
            qrels[(query_id, doc_id)] = grade
    return qrels


@dataclass
class QueryMetrics:
    query_id: str
    ndcg10: float
    ncg100: float
    ap100: float
    rr100: float


@dataclass
class EvalReport:
    per_query: list[QueryMetrics]
    means: QueryMetrics

    def to_csv(self) -> str:
        lines = ["query_id,ndcg10,ncg100,ap100,rr100"]
        for row in self.per_query + [self.means]:
            lines.append(
                f"{row.query_id},{row.ndcg10:.6f},{row.ncg100:.6f},{row.ap100:.6f},{row.rr100:.6f}"
            )
        return "\n".join(lines) + "\n"


def rerank_for_scoring(ranking: list[tuple[str, float]]) -> list[str]:
    """The evaluation ordering: score descending, then doc_id descending."""
    return [doc_id for doc_id, _ in sorted(ranking, key=lambda p: (p[1], p[0]), reverse=True)]


def evaluate_run(
    run: RunFile,
    qrels: Qrels,
    ndcg_cutoff: int = DEFAULT_NDCG_CUTOFF,
    cutoff: int = DEFAULT_CUTOFF,
    binarize_threshold: int = DEFAULT_THRESHOLD,
) -> EvalReport:
    """Score every run query that has judgments; unjudged queries are ignored."""
    by_query: dict[str, dict[str, int]] = {}
    for (query_id, doc_id), grade in qrels.items():
        by_query.setdefault(query_id, {})[doc_id] = grade

    rows: list[QueryMetrics] = []
    for query_id in sorted(run.entries):
        grades = by_query.get(query_id)
        if grades is None:
            continue
        ranked_ids = rerank_for_scoring(run.entries[query_id])
        ranking_grades = [grades.get(d, 0) for d in ranked_ids]
        ideal_grades = list(grades.values())
        rows.append(
            QueryMetrics(
                query_id=query_id,
                ndcg10=ndcg_at(ranking_grades, ideal_grades, ndcg_cutoff),
                ncg100=ncg_at(ranking_grades, ideal_grades, cutoff),
                ap100=average_precision(ranked_ids, grades, cutoff, binarize_threshold),
                rr100=reciprocal_rank(ranked_ids, grades, cutoff, binarize_threshold),
            )
        )
    n = len(rows)
    means = QueryMetrics(
        query_id="ALL",
        ndcg10=sum(r.ndcg10 for r in rows) / n if n else 0.0,
        ncg100=sum(r.ncg100 for r in rows) / n if n else 0.0,
        ap100=sum(r.ap100 for r in rows) / n if n else 0.0,
        rr100=sum(r.rr100 for r in rows) / n if n else 0.0,
    )
    return EvalReport(per_query=rows, means=means)
