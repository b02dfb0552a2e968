import numpy as np

from teko.corpus_io import load_graph
from teko.knowledge_embed import load_knowledge_base
from teko.synthetic import benchmark_corpus, topic_corpus, translation_kg


def test_benchmark_is_deterministic_and_roundtrips(tmp_path):
    a, b = benchmark_corpus(seed=3), benchmark_corpus(seed=3)
    assert np.array_equal(a.labels, b.labels) and a.edges == b.edges
    assert set(np.unique(a.labels)) == {0, 1, 2, 3}
    paths = a.write(tmp_path)
    g = load_graph(paths["documents"], paths["edges"])
    assert g.edges == a.edges and len(g.documents) == 200
    kb = load_knowledge_base(paths["triplets"], paths["descriptions"])
    assert kb.triplets == a.knowledge_base().triplets


def test_knowledge_coverage_is_complementary():
    kb = benchmark_corpus(seed=0).knowledge_base()
    in_triplets = {x for h, _, t in kb.triplets for x in (h, t)}
    described = {e for e, text in kb.descriptions.items() if text}
    assert in_triplets and described


def test_small_generators():
    kb = translation_kg()
    assert len(kb.entities) == 8 and len(kb.relations) == 2
    corpus = topic_corpus(n_docs=5, seed=1)
    assert corpus.topic_word.shape[0] == 3
    assert np.allclose(corpus.topic_word.sum(axis=1), 1.0)
