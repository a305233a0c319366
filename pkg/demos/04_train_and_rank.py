"""Train the three ranking variants on a planted-relevance world.

The synthetic generator plants topics: graded documents share content terms
with their queries, near-miss documents use synonyms, fillers are noise.
NDRM1 pools Gaussian-kernel similarities from the encoder, NDRM2 is a
learned BM25-form exact matcher, NDRM3 gates between them. Run:

    python3 demos/04_train_and_rank.py        (roughly half a minute)
"""

import numpy as np

from ckrank import (
    Corpus,
    ModelConfig,
    RunFile,
    TrainConfig,
    evaluate_run,
    query_score,
    query_token_ids,
    train,
)
from ckrank.synth import SynthSpec, synthesize

data = synthesize(SynthSpec(num_topics=5, filler_docs=20, seed=0))
corpus = Corpus.build(data.documents, min_df=2, max_doc_len=64)
print("=== the world ===")
print(f"{len(corpus)} documents, vocabulary of {corpus.vocab.size - 2} terms")
print(f"{len(data.train_queries)} training queries, {len(data.test_queries)} held-out queries")
print("Held-out queries overlap each topic's training query in one content")
print("term and introduce another, so ranking well requires more than")
print("memorizing the training strings.\n")

base = dict(
    embed_dim=16, d_key=12, d_value=12, num_layers=1, conv_window=3, ffn_dim=24,
    max_doc_len=64, max_query_len=8,
)


def fullrank(params, variant):
    run = RunFile(entries={})
    for q in data.test_queries:
        ids = query_token_ids(corpus.vocab, q.text, base["max_query_len"])
        scored = [
            (d.doc_id, query_score(ids, d, params, corpus.vocab, variant=variant))
            for d in corpus.documents
        ]
        positive = [p for p in scored if p[1] > 0]
        run.entries[q.query_id] = sorted(
            positive, key=lambda p: (p[1], p[0]), reverse=True
        )[:100]
    return evaluate_run(run, data.qrels)


results = {}
for variant in ("NDRM1", "NDRM2", "NDRM3"):
    config = ModelConfig(variant=variant, **base)
    tc = TrainConfig(epochs=5, batch_size=8, seed=0, negatives_per_positive=2,
                     learning_rate=1e-3)
    params, losses = train(corpus, data.train_queries, data.qrels, config, tc)
    report = fullrank(params, variant)
    results[variant] = report.means
    print(f"=== {variant} ===")
    print(f"  pairwise loss per epoch: {', '.join(f'{l:.4f}' for l in losses)}")
    print(f"  held-out NDCG@10 {report.means.ndcg10:.4f}  "
          f"AP@100 {report.means.ap100:.4f}  RR@100 {report.means.rr100:.4f}")

print()
print("=== reading the comparison ===")
print("NDRM2's exact matcher nails documents that repeat the query terms but")
print("cannot see synonyms; NDRM1's kernel pooling generalizes but is noisy")
print("at this scale; the gated NDRM3 typically matches or beats both:")
for variant, means in results.items():
    print(f"  {variant}: NDCG@10 {means.ndcg10:.4f}")
g = float(np.round(results["NDRM3"].ndcg10 - results["NDRM1"].ndcg10, 4))
print(f"NDRM3 minus NDRM1 on this seed: {g:+.4f}")
