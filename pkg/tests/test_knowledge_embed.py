import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from teko.errors import DimensionMismatch, EmptyDescriptions, EmptyKnowledgeBase, MalformedRecord
from teko.knowledge_embed import (
    GateState,
    KnowledgeBase,
    LDAConfig,
    TransEConfig,
    _gibbs_sweep,
    entity_features,
    fuse,
    fuse_gate_grad,
    load_descriptions,
    load_knowledge_base,
    read_embeddings,
    sigmoid,
    textual_representation,
    train_lda,
    train_transe,
    transe_score,
    write_embeddings,
)
from teko.synthetic import topic_corpus, translation_kg

from helpers import best_permutation_cosine, transe_tail_ranks, uniform_mrr

vec = st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=3).map(np.array)


class TestScore:
    def test_exact_translation(self):
        assert transe_score([1, 0], [0, 1], [1, 1]) == 0.0

    def test_arithmetic(self):
        assert transe_score([1, 0], [0, 0], [0, 1]) == -2.0

    def test_identity(self):
        assert transe_score([0.3, -2.0], [0, 0], [0.3, -2.0]) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            transe_score([1, 0], [1], [1, 0])

    @given(vec, vec, vec)
    def test_nonpositive_and_reverse_symmetric(self, h, r, t):
        s = transe_score(h, r, t)
        assert s <= 0
        assert transe_score(t, -r, h) == pytest.approx(s, rel=1e-12, abs=1e-12)


class TestKnowledgeBase:
    def test_duplicates_dropped_and_vocab(self):
        kb = KnowledgeBase.from_records([("a", "r", "b"), ("a", "r", "b")], {"c": "text"})
        assert kb.triplets == [("a", "r", "b")]
        assert kb.entities == ["a", "b", "c"] and kb.relations == ["r"]

    def test_head_filter(self):
        kb = KnowledgeBase.from_records([("a", "r", "b"), ("b", "r", "c")])
        assert kb.head_filtered(["a"]).triplets == [("a", "r", "b")]

    def test_files(self, write_text, write_jsonl):
        tp = write_text("a\tr\tb\n# skip\nb\tr\tc\n", "t.tsv")
        dp = write_jsonl([{"id": "a", "text": "alpha words"}], "d.jsonl")
        kb = load_knowledge_base(tp, dp)
        assert len(kb.triplets) == 2 and kb.descriptions == {"a": "alpha words"}
        with pytest.raises(MalformedRecord):
            load_knowledge_base(write_text("a\tb\n", "bad.tsv"))
        with pytest.raises(MalformedRecord):
            load_descriptions(write_text('{"id": 3}\n', "bad.jsonl"))


class TestTransE:
    cfg = TransEConfig(dim=16, epochs=200, seed=0)

    def test_ranking_beats_random(self):
        kb = translation_kg()
        state = train_transe(kb, self.cfg)
        mrr = float(np.mean(1.0 / transe_tail_ranks(state, kb)))
        assert mrr > 2 * uniform_mrr(len(kb.entities))

    def test_unit_norms(self):
        state = train_transe(translation_kg(), TransEConfig(dim=8, epochs=5))
        assert np.allclose(np.linalg.norm(state.entity_matrix, axis=1), 1.0, atol=1e-6)

    def test_deterministic(self):
        a = train_transe(translation_kg(), TransEConfig(dim=8, epochs=20, seed=3))
        b = train_transe(translation_kg(), TransEConfig(dim=8, epochs=20, seed=3))
        assert np.array_equal(a.entity_matrix, b.entity_matrix)
        assert np.array_equal(a.relation_matrix, b.relation_matrix)
        assert a.history == b.history

    def test_history_tail_non_increasing(self):
        h = train_transe(translation_kg(), self.cfg).history
        tail = h[int(0.8 * len(h)):]
        assert all(b <= a for a, b in zip(tail, tail[1:]))

    def test_empty(self):
        with pytest.raises(EmptyKnowledgeBase):
            train_transe(KnowledgeBase.from_records([], {"a": "x"}))

    def test_only_triplet_entities_embedded(self):
        kb = KnowledgeBase.from_records([("a", "r", "b")], {"c": "words here"})
        assert train_transe(kb, TransEConfig(dim=4, epochs=2)).entities == ["a", "b"]


class TestLDA:
    def test_recovers_topics(self):
        corpus = topic_corpus(seed=0)
        state = train_lda(corpus.kb, LDAConfig(topics=3, iters=300, seed=0))
        order = [state.vocabulary.index(w) for w in corpus.vocabulary]
        assert best_permutation_cosine(corpus.topic_word, state.topic_word[:, order]) >= 0.8

    def test_simplex(self):
        state = train_lda(topic_corpus(n_docs=10).kb, LDAConfig(topics=4, iters=20))
        assert np.allclose(state.topic_word.sum(axis=1), 1.0, atol=1e-9)
        for theta in state.doc_topic.values():
            assert abs(theta.sum() - 1.0) <= 1e-9 and np.all(theta >= 0)

    def test_empty_description_is_uniform(self):
        kb = KnowledgeBase.from_records([], {"a": "some words here", "b": ""})
        state = train_lda(kb, LDAConfig(topics=4, iters=10))
        assert np.allclose(state.doc_topic["b"], 0.25, atol=1e-12)

    def test_no_tokens(self):
        with pytest.raises(EmptyDescriptions):
            train_lda(KnowledgeBase.from_records([], {"a": "", "b": "!"}), LDAConfig(topics=2))

    def test_deterministic(self):
        kb = topic_corpus(n_docs=8).kb
        a = train_lda(kb, LDAConfig(topics=3, iters=15, seed=5))
        b = train_lda(kb, LDAConfig(topics=3, iters=15, seed=5))
        assert np.array_equal(a.topic_word, b.topic_word)

    def test_sweep_preserves_token_counts(self):
        rng = np.random.default_rng(0)
        words = rng.integers(0, 6, 50)
        docs = np.sort(rng.integers(0, 4, 50))
        z = rng.integers(0, 3, 50)
        ndk = np.zeros((4, 3), dtype=np.int64)
        nkw = np.zeros((3, 6), dtype=np.int64)
        np.add.at(ndk, (docs, z), 1)
        np.add.at(nkw, (z, words), 1)
        nk = nkw.sum(axis=1)
        before = (ndk.sum(axis=0).sum(), nkw.sum(), ndk.sum(axis=1).copy())
        _gibbs_sweep(words, docs, z, ndk, nkw, nk, 0.5, 0.01, 0.06, rng.random(50))
        assert ndk.sum() == nkw.sum() == nk.sum() == before[1] == 50
        assert np.array_equal(ndk.sum(axis=1), before[2])
        assert np.array_equal(nk, nkw.sum(axis=1))

    def test_textual_representation(self):
        kb = KnowledgeBase.from_records([], {"a": "words words"})
        state = train_lda(kb, LDAConfig(topics=4, iters=2))
        state.doc_topic["x"] = np.array([0.7, 0.2, 0.1, 0.0])
        assert np.array_equal(textual_representation(state, "x"), [0.7, 0.2, 0.1, 0.0])
        assert np.array_equal(textual_representation(state, "unknown"), [0.25] * 4)


class TestFuse:
    def test_zero_gate_averages(self):
        out = fuse(np.array([1.0, 3.0]), np.array([3.0, 5.0]), GateState.zeros(2))
        assert np.array_equal(out, [2.0, 4.0])

    def test_ln3_gate(self):
        out = fuse(np.array([4.0]), np.array([0.0]), np.array([math.log(3)]))
        assert out[0] == pytest.approx(3.0, abs=1e-12)

    def test_concat_and_ablations(self):
        es, ed = np.array([1.0, 2.0]), np.array([3.0, 4.0])
        assert list(fuse(es, ed, None, "concat")) == [1, 2, 3, 4]
        assert fuse(es, ed, None, "triplet_only").tobytes() == es.tobytes()
        assert fuse(es, ed, None, "textual_only").tobytes() == ed.tobytes()

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            fuse(np.ones(2), np.ones(3), np.zeros(2))

    def test_limits(self):
        es, ed = np.array([0.3, -1.2]), np.array([0.9, 0.4])
        assert np.allclose(fuse(es, ed, np.full(2, 30.0)), es, atol=1e-9, rtol=0)
        assert np.allclose(fuse(es, ed, np.full(2, -30.0)), ed, atol=1e-9, rtol=0)

    @given(vec, vec, vec)
    def test_convex_and_bounded(self, es, ed, logits):
        g = sigmoid(logits)
        assert np.all((g > 0) & (g < 1)) or np.any(np.abs(logits) > 30)
        out = fuse(es, ed, logits)
        lo, hi = np.minimum(es, ed), np.maximum(es, ed)
        assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)

    def test_gate_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        es, ed = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        logits, up = rng.normal(size=4), rng.normal(size=(5, 4))
        analytic = fuse_gate_grad(es, ed, logits, up)
        eps = 1e-5
        for k in range(4):
            d = np.zeros(4)
            d[k] = eps
            num = (np.sum(up * fuse(es, ed, logits + d)) - np.sum(up * fuse(es, ed, logits - d)))
            num /= 2 * eps
            assert abs(num - analytic[k]) / max(abs(num), abs(analytic[k]), 1e-6) < 1e-4


class TestEntityFeatures:
    def test_fallbacks(self):
        kb = KnowledgeBase.from_records([("a", "r", "b")], {"a": "words here", "c": "more words"})
        transe = train_transe(kb, TransEConfig(dim=4, epochs=3))
        lda = train_lda(kb, LDAConfig(topics=4, iters=3))
        f = entity_features(["a", "z"], transe, lda, dim=4, seed=0)
        assert np.array_equal(f.triplet[0], transe.entity_matrix[0])
        assert np.linalg.norm(f.triplet[1]) == pytest.approx(0.5)
        assert np.array_equal(f.textual[1], [0.25] * 4)
        again = entity_features(["a", "z"], transe, lda, dim=4, seed=0)
        assert np.array_equal(f.triplet, again.triplet)

    def test_dimension_checks(self):
        kb = KnowledgeBase.from_records([("a", "r", "b")])
        transe = train_transe(kb, TransEConfig(dim=4, epochs=1))
        with pytest.raises(DimensionMismatch):
            entity_features(["a"], transe, None, dim=8)


def test_embedding_file_roundtrip(tmp_path):
    M = np.random.default_rng(0).normal(size=(3, 5))
    write_embeddings(["x", "y", "z"], M, tmp_path / "e.tsv")
    ids, back = read_embeddings(tmp_path / "e.tsv")
    assert ids == ["x", "y", "z"] and np.array_equal(back, M)
