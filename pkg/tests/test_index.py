import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ckrank.corpus import Corpus, Document, query_token_ids
from ckrank.errors import (
    EmptyCorpus,
    FormatError,
    NonPositiveImpact,
    UnknownDocument,
)
from ckrank.index import (
    EXPANSION_MODES,
    INDEX_MAGIC,
    INDEX_VERSION,
    ImpactIndex,
    TermPostings,
    build_index,
    dequantize,
    load_index,
    quantize,
    retrieve,
    rerank,
    save_index,
    score_document_terms,
    serialize_index,
)
from ckrank.model import ModelConfig, ModelParams, encode_document, query_score
from ckrank.synth import random_corpus

SMALL = ModelConfig(
    embed_dim=8, d_key=6, d_value=6, num_layers=2, conv_window=3, ffn_dim=10,
    max_doc_len=64, max_query_len=8,
)


def small_corpus() -> Corpus:
    docs = [
        Document(doc_id="d1", title="red apples", body="fresh red apples from the orchard"),
        Document(doc_id="d2", body="green pears and red plums in the market"),
        Document(doc_id="d3", body="the orchard sells fresh fruit and pears"),
        Document(doc_id="d4", body="market prices for fruit red green fresh"),
    ]
    return Corpus.build(docs, min_df=1, max_doc_len=SMALL.max_doc_len)


@pytest.fixture(scope="module")
def corpus():
    return small_corpus()


@pytest.fixture(scope="module")
def params(corpus):
    return ModelParams.init(SMALL, corpus.vocab.size, seed=3)


@pytest.fixture(scope="module")
def quantized_index(corpus, params):
    return build_index(corpus, params, expansion_mode="own", tau=0.0, quantized=True)


@pytest.fixture(scope="module")
def raw_index(corpus, params):
    return build_index(corpus, params, expansion_mode="own", tau=0.0, quantized=False)


class TestQuantize:
    def test_term_max_maps_to_top_level(self):
        for tm in (2.0, 0.37, 1e-5, 3.14159, 255.0):
            assert quantize(tm, tm) == 255
            assert dequantize(255, tm) == tm

    def test_half_term_max_rounds_up_to_128(self):
        # 255 * 0.5 + 0.5 = 128.0 exactly
        assert quantize(1.0, 2.0) == 128

    def test_tiny_impact_clamps_to_one(self):
        assert quantize(1e-9, 1.0) == 1
        assert quantize(1.0 / 1000.0, 1.0) == 1

    def test_oversized_impact_clamps_to_255(self):
        assert quantize(3.0, 1.0) == 255

    def test_nonpositive_impact_rejected(self):
        with pytest.raises(NonPositiveImpact):
            quantize(0.0, 1.0)
        with pytest.raises(NonPositiveImpact):
            quantize(-0.5, 1.0)
        with pytest.raises(NonPositiveImpact):
            quantize(1.0, 0.0)

    def test_levels_cover_full_range(self):
        levels = {quantize(x, 1.0) for x in np.linspace(0.002, 1.0, 2000)}
        assert min(levels) == 1 and max(levels) == 255

    @given(
        tm=st.floats(min_value=1e-6, max_value=1e6, allow_nan=False, allow_infinity=False),
        frac=st.floats(min_value=1.0 / 510.0, max_value=1.0, allow_nan=False),
    )
    @settings(max_examples=200)
    def test_round_trip_error_within_half_step(self, tm, frac):
        impact = frac * tm
        level = quantize(impact, tm)
        assert 1 <= level <= 255
        err = abs(dequantize(level, tm) - impact)
        assert err <= (tm / 510.0) * (1.0 + 1e-9)


class TestBuildIndex:
    def test_own_mode_postings_only_for_contained_terms(self, corpus, quantized_index):
        for tid, plist in quantized_index.postings.items():
            for ref in plist.refs:
                assert tid in corpus.documents[int(ref)].term_counts()

    def test_refs_strictly_ascending(self, quantized_index):
        for plist in quantized_index.postings.values():
            assert np.all(np.diff(plist.refs) > 0)

    def test_levels_in_valid_band(self, quantized_index):
        for plist in quantized_index.postings.values():
            assert plist.levels.dtype == np.uint8
            assert plist.levels.min() >= 1
            assert plist.levels.max() == 255  # the max impact always hits the top level
            assert plist.scale > 0.0

    def test_raw_mode_keeps_float_impacts(self, raw_index):
        for plist in raw_index.postings.values():
            assert plist.levels.dtype == np.float32
            assert plist.scale == 1.0
            np.testing.assert_array_equal(plist.impacts(), plist.levels.astype(np.float64))

    def test_scale_is_term_max_over_255(self, raw_index, quantized_index):
        assert set(raw_index.postings) == set(quantized_index.postings)
        for tid, raw in raw_index.postings.items():
            term_max = float(raw.levels.max())
            expected = float(np.float32(term_max / 255.0))
            assert quantized_index.postings[tid].scale == expected

    def test_quantized_impacts_close_to_raw(self, raw_index, quantized_index):
        for tid, raw in raw_index.postings.items():
            term_max = float(raw.levels.max())
            got = quantized_index.postings[tid].impacts()
            want = raw.impacts()
            assert np.max(np.abs(got - want)) <= term_max / 510.0 + 1e-6 * term_max

    def test_empty_corpus_rejected(self, corpus, params):
        empty = Corpus(documents=[], vocab=corpus.vocab)
        with pytest.raises(EmptyCorpus):
            build_index(empty, params)

    def test_negative_tau_rejected(self, corpus, params):
        with pytest.raises(ValueError, match="tau"):
            build_index(corpus, params, tau=-0.1)

    def test_unknown_expansion_mode_rejected(self, corpus, params):
        with pytest.raises(ValueError, match="expansion_mode"):
            build_index(corpus, params, expansion_mode="all")

    def test_tau_prunes_postings(self, corpus, params, raw_index):
        impacts = [v for p in raw_index.postings.values() for v in p.impacts()]
        cut = float(np.median(impacts))
        pruned = build_index(corpus, params, tau=cut, quantized=False)
        kept = [v for p in pruned.postings.values() for v in p.impacts()]
        assert kept and all(v > cut for v in kept)
        assert len(kept) < len(impacts)

    def test_exact_match_variant_full_equals_own(self, corpus, params):
        # a term absent from a document gets tf = 0, hence exactly zero score
        own = build_index(corpus, params, expansion_mode="own", variant="NDRM2", quantized=False)
        full = build_index(corpus, params, expansion_mode="full", variant="NDRM2", quantized=False)
        assert set(own.postings) == set(full.postings)
        for tid in own.postings:
            np.testing.assert_array_equal(own.postings[tid].refs, full.postings[tid].refs)
            np.testing.assert_array_equal(own.postings[tid].levels, full.postings[tid].levels)

    def test_rebuild_is_byte_identical(self, corpus, params, quantized_index):
        again = build_index(corpus, params, expansion_mode="own", tau=0.0, quantized=True)
        assert serialize_index(again) == serialize_index(quantized_index)

    def test_threaded_build_matches_serial(self, corpus, params, quantized_index):
        threaded = build_index(corpus, params, threads=3)
        assert serialize_index(threaded) == serialize_index(quantized_index)

    def test_score_document_terms_skips_nonpositive(self, corpus, params):
        doc = corpus.documents[0]
        scores = score_document_terms(doc, params, corpus, expansion_mode="full", tau=0.0)
        assert scores and all(v > 0.0 for v in scores.values())

    def test_added_documents_leave_existing_impacts_unchanged(self, corpus, params):
        subset = Corpus(documents=corpus.documents[:2], vocab=corpus.vocab)
        small = build_index(subset, params, quantized=False)
        full = build_index(corpus, params, quantized=False)
        for tid, plist in small.postings.items():
            by_doc = dict(zip(full.postings[tid].refs.tolist(), full.postings[tid].levels.tolist()))
            for ref, level in zip(plist.refs.tolist(), plist.levels.tolist()):
                assert by_doc[ref] == level


class TestRetrieve:
    def test_matches_exhaustive_scoring_exactly(self):
        documents, queries = random_corpus(num_docs=50, num_terms=40, num_queries=8, seed=3, min_len=6, max_len=20)
        corpus = Corpus.build(documents, min_df=1, max_doc_len=SMALL.max_doc_len)
        params = ModelParams.init(SMALL, corpus.vocab.size, seed=0)
        index = build_index(corpus, params, expansion_mode="full", tau=0.0, quantized=False)
        encodings = {d.doc_id: encode_document(d.tokens, params) for d in corpus.documents}
        for query in queries:
            ids = query_token_ids(corpus.vocab, query.text, SMALL.max_query_len)
            scored = [
                (d.doc_id, query_score(ids, d, params, corpus.vocab, enc=encodings[d.doc_id]))
                for d in corpus.documents
            ]
            expected = sorted(
                [p for p in scored if p[1] > 0.0], key=lambda p: (p[1], p[0]), reverse=True
            )[:100]
            assert retrieve(index, ids, k=100) == expected

    def test_single_term_query_returns_that_postings_list(self, corpus, params, raw_index):
        tid = min(raw_index.postings)
        got = retrieve(raw_index, [tid], k=10)
        plist = raw_index.postings[tid]
        expect = sorted(
            [(corpus.documents[int(r)].doc_id, float(v)) for r, v in zip(plist.refs, plist.impacts())],
            key=lambda p: (p[1], p[0]),
            reverse=True,
        )
        assert got == expect[:10]

    def test_duplicate_token_doubles_scores(self, raw_index):
        tid = min(raw_index.postings)
        single = dict(retrieve(raw_index, [tid], k=100))
        double = dict(retrieve(raw_index, [tid, tid], k=100))
        assert set(single) == set(double)
        for doc_id, score in single.items():
            assert double[doc_id] == 2.0 * score

    def test_unknown_terms_contribute_nothing(self, corpus, raw_index):
        assert retrieve(raw_index, [0, 1], k=5) == []
        huge = corpus.vocab.size + 50
        assert retrieve(raw_index, [huge], k=5) == []

    def test_k_truncates(self, raw_index):
        tid = min(raw_index.postings)
        full = retrieve(raw_index, [tid], k=100)
        assert retrieve(raw_index, [tid], k=2) == full[:2]

    def test_k_must_be_positive(self, raw_index):
        with pytest.raises(ValueError, match="k"):
            retrieve(raw_index, [2], k=0)

    def test_ties_break_by_doc_id_descending(self):
        index = ImpactIndex(
            doc_ids=["a", "b", "c"],
            postings={
                2: TermPostings(
                    refs=np.array([0, 1, 2], dtype=np.int64),
                    levels=np.array([1.5, 1.5, 0.5], dtype=np.float32),
                    scale=1.0,
                )
            },
            quantized=False,
        )
        assert retrieve(index, [2], k=3) == [("b", 1.5), ("a", 1.5), ("c", 0.5)]


class TestRerank:
    def test_scores_agree_with_query_score(self, corpus, params):
        ids = query_token_ids(corpus.vocab, "red fruit market", SMALL.max_query_len)
        results = rerank(params, corpus, ids, [d.doc_id for d in corpus.documents])
        for doc_id, score in results:
            doc = corpus.by_id[doc_id]
            assert score == query_score(ids, doc, params, corpus.vocab)

    def test_order_is_score_desc_then_doc_id_desc(self, corpus, params):
        ids = query_token_ids(corpus.vocab, "red fruit", SMALL.max_query_len)
        results = rerank(params, corpus, ids, [d.doc_id for d in corpus.documents])
        keys = [(s, d) for d, s in results]
        assert keys == sorted(keys, reverse=True)

    def test_full_candidates_match_fullrank(self, corpus, params):
        index = build_index(corpus, params, expansion_mode="full", tau=0.0, quantized=False)
        ids = query_token_ids(corpus.vocab, "orchard pears", SMALL.max_query_len)
        reranked = rerank(params, corpus, ids, [d.doc_id for d in corpus.documents])
        assert retrieve(index, ids, k=100) == [p for p in reranked if p[1] > 0.0][:100]

    def test_unknown_candidate_rejected(self, corpus, params):
        with pytest.raises(UnknownDocument, match="nope1"):
            rerank(params, corpus, [2], ["d1", "nope1"])

    def test_duplicates_deduped(self, corpus, params):
        ids = query_token_ids(corpus.vocab, "red", SMALL.max_query_len)
        results = rerank(params, corpus, ids, ["d1", "d2", "d1", "d2", "d1"])
        assert sorted(d for d, _ in results) == ["d1", "d2"]

    def test_empty_candidates(self, corpus, params):
        assert rerank(params, corpus, [2], []) == []

    def test_encoding_cache_reused(self, corpus, params):
        cache = {}
        ids = query_token_ids(corpus.vocab, "fresh pears", SMALL.max_query_len)
        first = rerank(params, corpus, ids, ["d1", "d3"], encodings=cache)
        assert set(cache) == {"d1", "d3"}
        again = rerank(params, corpus, ids, ["d1", "d3"], encodings=cache)
        assert first == again


class TestIndexSerialization:
    def test_round_trip_preserves_everything(self, tmp_path, corpus, params):
        digest = bytes(range(32))
        index = build_index(corpus, params, expansion_mode="full", tau=0.25, variant="NDRM1", model_digest=digest)
        path = str(tmp_path / "t.ckix")
        save_index(path, index)
        loaded = load_index(path)
        assert loaded.doc_ids == index.doc_ids
        assert loaded.model_digest == digest
        assert loaded.expansion_mode == "full"
        assert loaded.variant == "NDRM1"
        assert loaded.tau == pytest.approx(0.25)
        assert loaded.quantized
        assert set(loaded.postings) == set(index.postings)
        for tid in index.postings:
            np.testing.assert_array_equal(loaded.postings[tid].refs, index.postings[tid].refs)
            np.testing.assert_array_equal(loaded.postings[tid].levels, index.postings[tid].levels)
            assert loaded.postings[tid].scale == np.float32(index.postings[tid].scale)

    def test_save_load_save_is_byte_identical(self, tmp_path, quantized_index):
        p1 = str(tmp_path / "a.ckix")
        p2 = str(tmp_path / "b.ckix")
        save_index(p1, quantized_index)
        save_index(p2, load_index(p1))
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_unquantized_index_not_writable(self, raw_index):
        with pytest.raises(ValueError, match="quantized"):
            serialize_index(raw_index)

    def test_bad_digest_length_rejected(self, quantized_index):
        bad = ImpactIndex(
            doc_ids=quantized_index.doc_ids,
            postings=quantized_index.postings,
            model_digest=b"\x01\x02",
        )
        with pytest.raises(ValueError, match="digest"):
            serialize_index(bad)

    def test_truncated_file_rejected(self, tmp_path, quantized_index):
        blob = serialize_index(quantized_index)
        path = tmp_path / "cut.ckix"
        path.write_bytes(blob[:-3])
        with pytest.raises(FormatError, match="truncated"):
            load_index(str(path))

    def test_bad_magic_rejected(self, tmp_path, quantized_index):
        blob = serialize_index(quantized_index)
        path = tmp_path / "magic.ckix"
        path.write_bytes(b"XXXX" + blob[4:])
        with pytest.raises(FormatError, match="magic"):
            load_index(str(path))

    def test_wrong_version_names_found_and_expected(self, tmp_path, quantized_index):
        blob = bytearray(serialize_index(quantized_index))
        blob[4:8] = (99).to_bytes(4, "little")
        path = tmp_path / "ver.ckix"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match=r"99.*1"):
            load_index(str(path))

    def test_trailing_bytes_rejected(self, tmp_path, quantized_index):
        blob = serialize_index(quantized_index)
        path = tmp_path / "extra.ckix"
        path.write_bytes(blob + b"\x00\x00")
        with pytest.raises(FormatError, match="trailing"):
            load_index(str(path))

    def test_unknown_expansion_byte_rejected(self, tmp_path, quantized_index):
        blob = bytearray(serialize_index(quantized_index))
        blob[48] = 9  # mode byte sits right after the 16-byte header and 32-byte digest
        path = tmp_path / "mode.ckix"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="expansion"):
            load_index(str(path))

    def test_unknown_variant_byte_rejected(self, tmp_path, quantized_index):
        blob = bytearray(serialize_index(quantized_index))
        blob[49] = 7
        path = tmp_path / "var.ckix"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="variant"):
            load_index(str(path))

    def test_out_of_range_ref_rejected(self, tmp_path):
        bogus = ImpactIndex(
            doc_ids=["only"],
            postings={
                2: TermPostings(
                    refs=np.array([5], dtype=np.int64),
                    levels=np.array([200], dtype=np.uint8),
                    scale=0.5,
                )
            },
        )
        path = tmp_path / "ref.ckix"
        path.write_bytes(serialize_index(bogus))
        with pytest.raises(FormatError, match="out of range"):
            load_index(str(path))

    def test_error_names_path(self, tmp_path):
        path = tmp_path / "named.ckix"
        path.write_bytes(b"junkjunkjunk")
        with pytest.raises(FormatError, match="named.ckix"):
            load_index(str(path))

    def test_constants(self):
        assert INDEX_MAGIC == b"CKIX"
        assert INDEX_VERSION == 1
        assert EXPANSION_MODES == ("own", "full")
