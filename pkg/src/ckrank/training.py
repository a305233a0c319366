"""Pairwise training: sample (query, positive, negative) triples, minimize
log(1 + exp(-(s_pos - s_neg))) with Adam. Fully determined by (seed, config,
corpus); negatives are resampled every epoch from the carried generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .checkpoint import save_checkpoint
from .corpus import PAD_ID, Corpus, Query, query_token_ids
from .errors import NoPositives, NonFinite
from .model import (
    ModelConfig,
    ModelParams,
    _doc_stats,
    _term_scores_t,
    bind,
    encode_tokens_t,
    scoreable_query_ids,
)
from .optim import AdamState, adam_step

Qrels = dict[tuple[str, str], int]


@dataclass
class TrainInstance:
    query_id: str
    query_tokens: list[int]
    positive_doc_id: str
    negative_doc_id: str


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 8
    seed: int = 0
    negatives_per_positive: int = 1
    learning_rate: float = 1e-3
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or self.negatives_per_positive < 1:
            raise ValueError("batch_size and negatives_per_positive must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def pairwise_loss(s_pos: float, s_neg: float) -> float:
    """log(1 + exp(-(s_pos - s_neg))); ln 2 at equality, invariant to shifts."""
    return float(np.logaddexp(0.0, -(s_pos - s_neg)))


def pair_loss_t(
    tape: Tape,
    tvars: dict[str, Tensor],
    config: ModelConfig,
    corpus: Corpus,
    instance: TrainInstance,
    variant: str | None = None,
) -> Tensor:
    """Differentiable loss for one triple; shares the exact scoring path."""
    variant = variant or config.variant
    qids = scoreable_query_ids(instance.query_tokens)
    totals = []
    for doc_id in (instance.positive_doc_id, instance.negative_doc_id):
        doc = corpus.by_id[doc_id]
        enc, mask = encode_tokens_t(tape, tvars, config, doc.tokens)
        tfs, idfs, doc_len = _doc_stats(doc, corpus.vocab, qids)
        scores = _term_scores_t(
            tape, tvars, config, enc, mask, qids, tfs, idfs, doc_len,
            corpus.vocab.avgdl, variant,
        )
        totals.append(ad.reduce_sum(scores))
    return ad.softplus(totals[1] - totals[0])


def sample_pairs(
    qrels: Qrels,
    queries: list[Query],
    corpus: Corpus,
    config: TrainConfig,
    rng: np.random.Generator,
) -> list[TrainInstance]:
    """Deterministic triples: every positive paired with uniform negatives.

    Negatives come from documents not positively labeled for the query.
    Raises NoPositives when a query has no negative candidates, or when no
    usable pair exists at all.
    """
    by_query: dict[str, set[str]] = {}
    for (qid, doc_id), grade in qrels.items():
        if grade > 0 and doc_id in corpus.by_id:
            by_query.setdefault(qid, set()).add(doc_id)
    query_map = {q.query_id: q for q in queries}
    all_doc_ids = sorted(corpus.by_id)

    instances: list[TrainInstance] = []
    for qid in sorted(by_query):
        query = query_map.get(qid)
        if query is None:
            continue
        tokens = query.tokens or query_token_ids(corpus.vocab, query.text)
        if not scoreable_query_ids(tokens):
            continue
        positives = by_query[qid]
        negatives_pool = [d for d in all_doc_ids if d not in positives]
        if not negatives_pool:
            raise NoPositives(f"query {qid!r}: every document is positively labeled")
        for pos in sorted(positives):
            picks = rng.choice(len(negatives_pool), size=config.negatives_per_positive)
            for idx in np.atleast_1d(picks):
                instances.append(
                    TrainInstance(
                        query_id=qid,
                        query_tokens=list(tokens),
                        positive_doc_id=pos,
                        negative_doc_id=negatives_pool[int(idx)],
                    )
                )
    if not instances:
        raise NoPositives("no trainable (query, positive, negative) triples")
    rng.shuffle(instances)
    return instances


def train(
    corpus: Corpus,
    queries: list[Query],
    qrels: Qrels,
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> tuple[ModelParams, list[float]]:
    """Returns (trained params, per-epoch mean losses)."""
    params = ModelParams.init(model_config, corpus.vocab.size, seed=train_config.seed)
    opt = AdamState(lr=train_config.learning_rate)
    rng = np.random.default_rng(train_config.seed)
    history: list[float] = []
    step = 0
    for epoch in range(train_config.epochs):
        instances = sample_pairs(qrels, queries, corpus, train_config, rng)
        epoch_losses: list[float] = []
        for start in range(0, len(instances), train_config.batch_size):
            batch = instances[start : start + train_config.batch_size]
            acc = {name: np.zeros_like(arr) for name, arr in params.arrays.items()}
            step += 1
            try:
                for instance in batch:
                    tape = Tape()
                    tvars = bind(tape, params)
                    loss = pair_loss_t(tape, tvars, model_config, corpus, instance)
                    ad.backward(loss)
                    epoch_losses.append(float(loss.data))
                    for name, t in tvars.items():
                        if t.grad is not None:
                            acc[name] += t.grad
                for name in acc:
                    acc[name] /= len(batch)
                adam_step(params.arrays, acc, opt)
            except NonFinite as e:
                raise NonFinite(f"training step {step}: {e}") from e
            params.arrays["embedding"][PAD_ID] = 0.0
        history.append(float(np.mean(epoch_losses)) if epoch_losses else math.nan)
        if train_config.checkpoint_path:
            save_checkpoint(train_config.checkpoint_path, params)
    if train_config.epochs == 0 and train_config.checkpoint_path:
        save_checkpoint(train_config.checkpoint_path, params)
    return params, history
