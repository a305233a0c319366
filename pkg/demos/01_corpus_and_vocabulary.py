"""Corpus walkthrough: tokenization, vocabulary, and flattened model inputs.

Documents carry four text fields (url, title, body, click queries). The
vocabulary assigns contiguous integer ids starting at 2 (0 is PAD, 1 is UNK),
counts document frequencies, and records the collection statistics the
BM25-form scorer needs. Run from the repository root:

    python3 demos/01_corpus_and_vocabulary.py
"""

from ckrank import Corpus, Document, query_token_ids, tokenize
from ckrank.corpus import PAD_ID, UNK_ID, idf

documents = [
    Document(
        doc_id="d-orchard",
        url="https://example.test/orchard",
        title="The Orchard Stand",
        body="Fresh apples and pears, picked daily at the orchard stand.",
    ),
    Document(
        doc_id="d-market",
        title="City Market Prices",
        body="Market prices for apples, plums, and autumn pears.",
        click_queries=["apple prices", "fruit market"],
    ),
    Document(doc_id="d-recipes", body="Baked apples with cinnamon; pear tart recipes."),
]

print("=== tokenization ===")
sample = "Fresh APPLES, picked daily -- at the orchard!"
print(f"input : {sample!r}")
print(f"tokens: {tokenize(sample)}")
print("Lowercased, punctuation stripped; empty pieces dropped.\n")

print("=== vocabulary ===")
corpus = Corpus.build(documents, min_df=1, max_doc_len=32)
vocab = corpus.vocab
print(f"{vocab.size} ids total (2 reserved), over {vocab.num_docs} documents")
print(f"avgdl (mean flattened length) = {vocab.avgdl:.2f}")
for term in ("apples", "pears", "orchard", "cinnamon"):
    tid = vocab.id_of(term)
    print(f"  {term!r}: id={tid}  df={vocab.df[term]}  idf={idf(vocab, term):.4f}")
print()

print("=== flattening ===")
print("Fields concatenate in order url, title, body, click queries, then")
print("truncate to max_doc_len. Click queries let navigational phrasing")
print("count as document text.")
doc = corpus.by_id["d-market"]
print(f"{doc.doc_id}: {len(doc.tokens)} token ids")
print(f"  first ten: {doc.tokens[:10]}")
terms = [vocab.term_of(t) or "<pad>" for t in doc.tokens[:10]]
print(f"  which are: {terms}")
print("  (a PAD id separates field blocks, so convolution windows never")
print("  blur across a field boundary)\n")

print("=== rare terms and min_df ===")
strict = Corpus.build(
    [Document(doc_id=d.doc_id, url=d.url, title=d.title, body=d.body,
              click_queries=list(d.click_queries)) for d in documents],
    min_df=2, max_doc_len=32,
)
kept = strict.vocab.size - 2
print(f"min_df=2 keeps {kept} terms (seen in at least two documents);")
print("the rest map to UNK. Term ids depend on min_df, so the same value")
print("must be used when indexing and searching with a trained model.\n")

print("=== query token ids ===")
ids = query_token_ids(vocab, "fresh orchard zebras", max_query_len=8)
print(f"'fresh orchard zebras' -> {ids}")
print(f"PAD_ID={PAD_ID}, UNK_ID={UNK_ID}; 'zebras' is out of vocabulary and")
print("contributes nothing to any score.")
