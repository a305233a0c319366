import math

import numpy as np
import pytest

from ckrank.checkpoint import (
    MAGIC,
    VERSION,
    checkpoint_digest,
    load_checkpoint,
    save_checkpoint,
    serialize,
)
from ckrank.corpus import PAD_ID, Corpus, Document, Query
from ckrank.errors import FormatError, NonFinite, NoPositives
from ckrank.model import ModelConfig, ModelParams
from ckrank.synth import SynthSpec, synthesize
from ckrank.training import TrainConfig, pairwise_loss, sample_pairs, train

TINY = ModelConfig(
    embed_dim=16, d_key=12, d_value=12, num_layers=1, conv_window=3, ffn_dim=24,
    max_doc_len=64, max_query_len=8,
)


def synth_world(seed=0, **kw):
    data = synthesize(SynthSpec(num_topics=4, filler_docs=12, seed=seed, **kw))
    corpus = Corpus.build(data.documents, min_df=2, max_doc_len=64)
    return data, corpus


class TestCheckpointFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        _, corpus = synth_world()
        params = ModelParams.init(TINY, corpus.vocab.size, seed=4)
        path = str(tmp_path / "model.ndrm")
        save_checkpoint(path, params)
        loaded = load_checkpoint(path)
        assert set(loaded.arrays) == set(params.arrays)
        for name in params.arrays:
            np.testing.assert_array_equal(loaded.arrays[name], params.arrays[name])
        assert loaded.vocab_size == params.vocab_size
        assert loaded.config.variant == params.config.variant
        assert loaded.config.embed_dim == TINY.embed_dim
        assert loaded.config.num_layers == TINY.num_layers

    def test_save_load_save_byte_identical(self, tmp_path):
        _, corpus = synth_world()
        params = ModelParams.init(TINY, corpus.vocab.size, seed=4)
        p1, p2 = str(tmp_path / "a.ndrm"), str(tmp_path / "b.ndrm")
        save_checkpoint(p1, params)
        save_checkpoint(p2, load_checkpoint(p1))
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_truncated_file(self, tmp_path):
        _, corpus = synth_world()
        params = ModelParams.init(TINY, corpus.vocab.size, seed=4)
        blob = serialize(params)
        path = tmp_path / "cut.ndrm"
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(str(path))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ndrm"
        path.write_bytes(b"JUNK" + b"\x00" * 32)
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(str(path))

    def test_version_mismatch_names_both(self, tmp_path):
        _, corpus = synth_world()
        params = ModelParams.init(TINY, corpus.vocab.size, seed=4)
        blob = bytearray(serialize(params))
        blob[4:8] = (99).to_bytes(4, "little")
        path = tmp_path / "v99.ndrm"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match=r"99.*expected.*1"):
            load_checkpoint(str(path))

    def test_digest_matches_sha256(self, tmp_path):
        import hashlib

        _, corpus = synth_world()
        params = ModelParams.init(TINY, corpus.vocab.size, seed=4)
        path = str(tmp_path / "model.ndrm")
        hex_digest = save_checkpoint(path, params)
        raw = checkpoint_digest(path)
        assert len(raw) == 32
        assert raw.hex() == hex_digest
        assert hashlib.sha256(open(path, "rb").read()).digest() == raw

    def test_magic_constant(self):
        assert MAGIC == b"NDRM" and VERSION == 1


class TestPairwiseLoss:
    def test_equal_scores_ln2(self):
        assert pairwise_loss(1.5, 1.5) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_unit_margin(self):
        assert pairwise_loss(2.0, 1.0) == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
        assert pairwise_loss(2.0, 1.0) == pytest.approx(0.3133, abs=1e-4)

    def test_large_margin_goes_to_zero(self):
        assert pairwise_loss(1e4, 0.0) == 0.0

    def test_shift_invariance(self):
        assert pairwise_loss(3.0, 1.0) == pytest.approx(pairwise_loss(13.0, 11.0), abs=1e-12)

    def test_extreme_negative_margin_finite(self):
        assert np.isfinite(pairwise_loss(0.0, 1e4))


class TestSamplePairs:
    def test_single_possible_pair(self):
        docs = [Document(doc_id="pos", body="red apples red"), Document(doc_id="neg", body="green pears green")]
        corpus = Corpus.build(docs, min_df=1)
        queries = [Query(query_id="q1", text="red apples")]
        qrels = {("q1", "pos"): 1}
        rng = np.random.default_rng(0)
        pairs = sample_pairs(qrels, queries, corpus, TrainConfig(), rng)
        assert len(pairs) == 1
        assert pairs[0].positive_doc_id == "pos" and pairs[0].negative_doc_id == "neg"

    def test_same_seed_identical_stream(self):
        data, corpus = synth_world()
        qrels = data.qrels
        cfg = TrainConfig(negatives_per_positive=2)
        a = sample_pairs(qrels, data.train_queries, corpus, cfg, np.random.default_rng(5))
        b = sample_pairs(qrels, data.train_queries, corpus, cfg, np.random.default_rng(5))
        assert [(p.query_id, p.positive_doc_id, p.negative_doc_id) for p in a] == [
            (p.query_id, p.positive_doc_id, p.negative_doc_id) for p in b
        ]

    def test_every_doc_positive_raises(self):
        docs = [Document(doc_id="a", body="red fruit"), Document(doc_id="b", body="red berry fruit")]
        corpus = Corpus.build(docs, min_df=1)
        queries = [Query(query_id="q1", text="red")]
        qrels = {("q1", "a"): 1, ("q1", "b"): 2}
        with pytest.raises(NoPositives):
            sample_pairs(qrels, queries, corpus, TrainConfig(), np.random.default_rng(0))

    def test_negative_never_positively_labeled(self):
        data, corpus = synth_world()
        pairs = sample_pairs(
            data.qrels, data.train_queries, corpus, TrainConfig(negatives_per_positive=3),
            np.random.default_rng(9),
        )
        positives = {
            (qid, did) for (qid, did), g in data.qrels.items() if g > 0
        }
        for p in pairs:
            assert (p.query_id, p.negative_doc_id) not in positives
            assert p.positive_doc_id != p.negative_doc_id


class TestTrain:
    def test_epochs_zero_returns_init(self):
        data, corpus = synth_world()
        cfg = TrainConfig(epochs=0, seed=6)
        params, history = train(corpus, data.train_queries, data.qrels, TINY, cfg)
        init = ModelParams.init(TINY, corpus.vocab.size, seed=6)
        assert history == []
        for name in init.arrays:
            np.testing.assert_array_equal(params.arrays[name], init.arrays[name])

    def test_identical_seeds_identical_history(self):
        data, corpus = synth_world()
        cfg = TrainConfig(epochs=2, batch_size=8, seed=3)
        _, h1 = train(corpus, data.train_queries, data.qrels, TINY, cfg)
        _, h2 = train(corpus, data.train_queries, data.qrels, TINY, cfg)
        assert h1 == h2

    def test_loss_decreases_over_first_three_epochs(self):
        data, corpus = synth_world()
        cfg = TrainConfig(epochs=3, batch_size=8, seed=1, negatives_per_positive=2)
        _, history = train(corpus, data.train_queries, data.qrels, TINY, cfg)
        assert len(history) == 3
        assert history[0] > history[1] > history[2]

    def test_pad_row_stays_zero(self):
        data, corpus = synth_world()
        cfg = TrainConfig(epochs=2, batch_size=4, seed=2)
        params, _ = train(corpus, data.train_queries, data.qrels, TINY, cfg)
        np.testing.assert_array_equal(params.arrays["embedding"][PAD_ID], 0.0)

    def test_checkpoint_written_and_loadable(self, tmp_path):
        data, corpus = synth_world()
        path = str(tmp_path / "ck.ndrm")
        cfg = TrainConfig(epochs=1, batch_size=8, seed=2, checkpoint_path=path)
        params, _ = train(corpus, data.train_queries, data.qrels, TINY, cfg)
        loaded = load_checkpoint(path)
        for name in params.arrays:
            np.testing.assert_array_equal(loaded.arrays[name], params.arrays[name])

    def test_nonfinite_abort_names_step(self):
        data, corpus = synth_world()
        cfg = TrainConfig(epochs=2, batch_size=8, seed=1, learning_rate=1e30)
        with pytest.raises(NonFinite, match=r"step \d+"):
            train(corpus, data.train_queries, data.qrels, TINY, cfg)
