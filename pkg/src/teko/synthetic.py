"""Synthetic corpora and knowledge bases with known ground truth."""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus_io import Document, DocumentSet, TextRichGraph, build_attributes, canonical_edge, \
    write_documents, write_edges
from .entity_linking import LinkerLexicon
from .knowledge_embed import EntityFeatures, KnowledgeBase
from .semantic_graph import HeteroGraph


def pseudo_words(count, rng, length=6, exclude=()):
    """Distinct lowercase letter strings, none of them in ``exclude``."""
    letters = np.array(list(string.ascii_lowercase))
    seen = set(exclude)
    out = []
    while len(out) < count:
        w = "".join(rng.choice(letters, size=length))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def translation_kg() -> KnowledgeBase:
    """Eight entities, two relations with an exactly realizable translation.

    ``forward`` maps a_i -> b_i and ``backward`` maps b_i -> a_i (i < 4),
    so ``r_backward = -r_forward`` and every (head, relation) pair has one
    true tail.
    """
    trips = [(f"a{i}", "forward", f"b{i}") for i in range(4)]
    trips += [(f"b{i}", "backward", f"a{i}") for i in range(4)]
    return KnowledgeBase.from_records(trips)


@dataclass
class TopicCorpus:
    kb: KnowledgeBase
    topic_word: np.ndarray  # true distributions over ``vocabulary``
    vocabulary: list[str]
    doc_topic: np.ndarray


def topic_corpus(n_docs=60, n_topics=3, words_per_topic=12, doc_length=60, concentration=0.3,
                 seed=0) -> TopicCorpus:
    """Descriptions drawn from topics with disjoint, uniform vocabularies."""
    rng = np.random.default_rng(seed)
    vocab = pseudo_words(n_topics * words_per_topic, rng)
    V = len(vocab)
    phi = np.zeros((n_topics, V))
    for k in range(n_topics):
        phi[k, k * words_per_topic:(k + 1) * words_per_topic] = 1.0 / words_per_topic
    theta = rng.dirichlet(np.full(n_topics, concentration), size=n_docs)
    descs = {}
    for d in range(n_docs):
        z = rng.choice(n_topics, size=doc_length, p=theta[d])
        words = [vocab[rng.choice(V, p=phi[k])] for k in z]
        descs[f"ent{d:03d}"] = " ".join(words)
    kb = KnowledgeBase.from_records([], descs)
    return TopicCorpus(kb, phi, vocab, theta)


def random_hetero_instance(n_doc=8, n_ent=4, n_feat=6, u=3, p_dd=0.3, p_de=0.3, p_ee=0.4,
                           seed=0, feature_scale=1.0):
    """Random two-type graph with features, for property tests."""
    rng = np.random.default_rng(seed)
    docs = tuple(f"d{i:02d}" for i in range(n_doc))
    ents = tuple(f"e{i:02d}" for i in range(n_ent))
    dd = frozenset((docs[i], docs[j]) for i in range(n_doc) for j in range(i + 1, n_doc)
                   if rng.random() < p_dd)
    de = frozenset((d, e) for d in docs for e in ents if rng.random() < p_de)
    ee = frozenset((ents[i], ents[j]) for i in range(n_ent) for j in range(i + 1, n_ent)
                   if rng.random() < p_ee)
    graph = HeteroGraph(docs, ents, dd, de, ee)
    X = rng.uniform(-feature_scale, feature_scale, size=(n_doc, n_feat))
    feats = EntityFeatures(list(ents), rng.uniform(-feature_scale, feature_scale, size=(n_ent, u)),
                           rng.dirichlet(np.ones(u), size=n_ent))
    return graph, X, feats


@dataclass
class BenchmarkData:
    """A labeled document network plus the resources the pipeline links to."""

    documents: DocumentSet
    edges: frozenset
    lexicon: LinkerLexicon
    triplets: list[tuple[str, str, str]]
    descriptions: dict[str, str]
    community: np.ndarray
    group: np.ndarray
    entity_group: dict[str, int]
    entity_source: dict[str, str]

    @property
    def labels(self) -> np.ndarray:
        return np.array([d.label for d in self.documents])

    def text_graph(self, vocab=None) -> TextRichGraph:
        X, terms = build_attributes(self.documents) if vocab is None \
            else build_attributes(self.documents, vocab)
        return TextRichGraph(self.documents, self.edges, X, terms)

    def knowledge_base(self) -> KnowledgeBase:
        return KnowledgeBase.from_records(self.triplets, self.descriptions)

    def write(self, directory) -> dict[str, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = dict(documents=d / "documents.jsonl", edges=d / "edges.tsv",
                     lexicon=d / "lexicon.tsv", triplets=d / "triplets.tsv",
                     descriptions=d / "descriptions.jsonl")
        write_documents(self.documents, paths["documents"])
        write_edges(self.edges, paths["edges"])
        with paths["lexicon"].open("w", encoding="utf-8") as fh:
            for phrase, cands in self.lexicon.surface_forms.items():
                for ent, prior in cands:
                    fh.write(f"{phrase}\t{ent}\t{prior!r}\n")
        with paths["triplets"].open("w", encoding="utf-8") as fh:
            fh.writelines(f"{h}\t{r}\t{t}\n" for h, r, t in self.triplets)
        with paths["descriptions"].open("w", encoding="utf-8") as fh:
            for e in sorted(self.descriptions):
                fh.write(json.dumps({"id": e, "text": self.descriptions[e]}) + "\n")
        return paths


def benchmark_corpus(n_docs=200, n_entities=80, n_noise_entities=20, p_in=0.05, p_out=0.004,
                     filler_vocab=300, doc_length=30, desc_length=80, generic_vocab=10, seed=0) -> BenchmarkData:
    """Documents whose class is ``2 * community + entity_group``.

    * The community is visible only through the citation-style edges
      (a two-block stochastic block model).
    * The entity group is visible only through the knowledge about the one
      entity each document mentions. For half of the entities the group is
      encoded in triplets (``member_of`` a group hub, ``related_to`` a
      same-group entity) and they have no description; for the other half
      it is encoded in the description vocabulary and they have no
      triplets. Entity surface names are unique tokens that carry no group
      signal by themselves.
    * Each document also mentions a low-prior noise entity with no
      knowledge attached, which a tagging threshold above 0.2 removes.
    """
    rng = np.random.default_rng(seed)
    words = pseudo_words(filler_vocab + 2 * (n_entities + n_noise_entities) + 2 * 40 + generic_vocab,
                         rng)
    filler, words = words[:filler_vocab], words[filler_vocab:]
    surfaces, words = words[: 2 * (n_entities + n_noise_entities)], words[2 * (n_entities + n_noise_entities):]
    topic_g = [words[:40], words[40:80]]
    generic_desc = words[80:80 + generic_vocab]

    community = np.repeat([0, 1], n_docs // 2)
    community = np.concatenate([community, rng.integers(0, 2, n_docs - len(community))])
    community = rng.permutation(community)
    group = rng.permutation(np.arange(n_docs) % 2)

    ent_ids = [f"Q{i:03d}" for i in range(n_entities)]
    noise_ids = [f"N{i:03d}" for i in range(n_noise_entities)]
    entity_group = {e: i % 2 for i, e in enumerate(ent_ids)}
    entity_source = {e: ("triplet" if (i // 2) % 2 == 0 else "description")
                     for i, e in enumerate(ent_ids)}

    lex = LinkerLexicon()
    surface_of = {}
    for i, e in enumerate(ent_ids + noise_ids):
        phrase = f"{surfaces[2 * i]} {surfaces[2 * i + 1]}"
        surface_of[e] = phrase
        prior = rng.uniform(0.25, 1.0) if e in entity_group else rng.uniform(0.1, 0.2)
        lex.add(phrase, e, round(float(prior), 3))

    by_group = [[e for e in ent_ids if entity_group[e] == g] for g in (0, 1)]
    docs = []
    for i in range(n_docs):
        g = int(group[i])
        toks = list(rng.choice(filler, size=doc_length))
        ent = by_group[g][rng.integers(len(by_group[g]))]
        noise = noise_ids[rng.integers(len(noise_ids))]
        toks.insert(rng.integers(len(toks) + 1), surface_of[ent])
        toks.insert(rng.integers(len(toks) + 1), surface_of[noise])
        docs.append(Document(f"doc{i:03d}", " ".join(toks), int(2 * community[i] + g)))

    edges = set()
    for i in range(n_docs):
        for j in range(i + 1, n_docs):
            p = p_in if community[i] == community[j] else p_out
            if rng.random() < p:
                edges.add(canonical_edge(docs[i].id, docs[j].id))

    triplets = []
    descriptions = {}
    for g in (0, 1):
        members = [e for e in by_group[g] if entity_source[e] == "triplet"]
        for k, e in enumerate(members):
            triplets.append((e, "member_of", f"HUB{g}"))
            triplets.append((e, "related_to", members[(k + 1) % len(members)]))
    for e in ent_ids:
        if entity_source[e] == "description":
            own = rng.choice(topic_g[entity_group[e]], size=desc_length * 2 // 3)
            gen = rng.choice(generic_desc, size=desc_length - len(own))
            descriptions[e] = " ".join(rng.permutation(np.concatenate([own, gen])))
    for e in noise_ids:
        descriptions[e] = " ".join(rng.choice(generic_desc, size=desc_length))

    return BenchmarkData(DocumentSet(docs), frozenset(edges), lex, triplets, descriptions,
                         community, group, entity_group, entity_source)
