"""From trained model to quantized inverted index to retrieval.

Because every variant scores query terms independently, the per-term scores
of each document can be computed once at indexing time. Retrieval then only
sums stored impacts: no model in the loop, and (before quantization) exactly
the scores live evaluation would produce. Run:

    python3 demos/05_index_pipeline.py
"""

import os
import tempfile

from ckrank import (
    Corpus,
    ModelConfig,
    ModelParams,
    build_index,
    dequantize,
    load_index,
    query_score,
    query_token_ids,
    quantize,
    retrieve,
    save_index,
)
from ckrank.synth import random_corpus

documents, queries = random_corpus(num_docs=200, num_terms=60, num_queries=5, seed=11)
corpus = Corpus.build(documents, min_df=1, max_doc_len=64)
config = ModelConfig(
    embed_dim=16, d_key=12, d_value=12, num_layers=1, conv_window=3, ffn_dim=24,
    max_doc_len=64, max_query_len=8,
)
params = ModelParams.init(config, corpus.vocab.size, seed=2)

print("=== building impact indexes ===")
own = build_index(corpus, params, expansion_mode="own", tau=0.0, quantized=False)
full = build_index(corpus, params, expansion_mode="full", tau=0.0, quantized=False)
own_postings = sum(p.refs.size for p in own.postings.values())
full_postings = sum(p.refs.size for p in full.postings.values())
print(f"own-terms expansion : {own_postings:6d} postings "
      f"(each document lists only the terms it contains)")
print(f"full expansion      : {full_postings:6d} postings "
      f"(every positive term-document impact, enables semantic matches)")
pruned = build_index(corpus, params, expansion_mode="full", tau=0.05, quantized=False)
print(f"full with tau=0.05  : {sum(p.refs.size for p in pruned.postings.values()):6d} "
      f"postings (impacts <= tau dropped)\n")

print("=== retrieval equals exhaustive scoring ===")
all_match = True
for q in queries:
    ids = query_token_ids(corpus.vocab, q.text, config.max_query_len)
    from_index = retrieve(full, ids, k=10)
    scored = [
        (d.doc_id, query_score(ids, d, params, corpus.vocab)) for d in corpus.documents
    ]
    exhaustive = sorted(
        [p for p in scored if p[1] > 0], key=lambda p: (p[1], p[0]), reverse=True
    )[:10]
    all_match &= from_index == exhaustive
    top = from_index[0] if from_index else ("-", 0.0)
    print(f"  {q.query_id} ({q.text!r}): top doc {top[0]} at {top[1]:.4f}, "
          f"identical lists: {from_index == exhaustive}")
print(f"every query, same documents, same order, same float scores: {all_match}\n")

print("=== 8-bit quantization ===")
print("Each term's impacts map to levels 1..255 of its own maximum, so a")
print("posting costs one byte plus its document reference.")
term_max = 0.7313
for impact in (0.7313, 0.3657, 0.01, 0.0005):
    level = quantize(impact, term_max)
    back = dequantize(level, term_max)
    print(f"  impact {impact:.4f} -> level {level:3d} -> {back:.4f} "
          f"(err {abs(back - impact):.5f}, half-step bound {term_max / 510:.5f})")
print("The last row exceeds the half-step bound: levels clamp at 1, so an")
print("impact smaller than one step is stored as a full step rather than")
print("rounding to zero and vanishing from the postings.")
quant = build_index(corpus, params, expansion_mode="full", tau=0.0, quantized=True)
q0 = queries[0]
ids = query_token_ids(corpus.vocab, q0.text, config.max_query_len)
exact_ranks = [d for d, _ in retrieve(full, ids, k=10)]
quant_ranks = [d for d, _ in retrieve(quant, ids, k=10)]
overlap = len(set(exact_ranks) & set(quant_ranks))
print(f"top-10 for {q0.query_id}: {overlap}/10 shared with the exact index\n")

print("=== serialization round trip ===")
with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "demo.ckix")
    save_index(path, quant)
    size = os.path.getsize(path)
    again = load_index(path)
    same = retrieve(again, ids, k=10) == retrieve(quant, ids, k=10)
    print(f"wrote {size} bytes ({size / full_postings:.1f} per posting), "
          f"reload preserves rankings: {same}")
print()
print("The ckrank CLI chains these stages: synth -> train -> index -> search")
print("-> eval, plus rerank for scoring fixed candidate lists.")
