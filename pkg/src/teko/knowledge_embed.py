"""Entity representations from external knowledge.

Structured triplets are embedded with TransE, entity descriptions with a
collapsed-Gibbs LDA topic model, and the two are combined through a
sigmoid gate that the graph model later trains end to end.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numba
import numpy as np

from .corpus_io import tokenize
from .errors import (
    DimensionMismatch,
    EmptyDescriptions,
    EmptyKnowledgeBase,
    MalformedRecord,
    MissingFile,
)

FUSION_MODES = ("gated", "concat", "triplet_only", "textual_only")


@dataclass
class KnowledgeBase:
    entities: list[str]
    relations: list[str]
    triplets: list[tuple[str, str, str]]
    descriptions: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        ents, rels = set(self.entities), set(self.relations)
        seen = set()
        for trip in self.triplets:
            h, r, t = trip
            if h not in ents or t not in ents or r not in rels:
                raise ValueError(f"triplet {trip} references an unknown id")
            if trip in seen:
                raise ValueError(f"duplicate triplet {trip}")
            seen.add(trip)

    @classmethod
    def from_records(cls, triplets, descriptions=None) -> "KnowledgeBase":
        """Build vocabularies from the records, dropping exact duplicates."""
        descriptions = dict(descriptions or {})
        uniq = list(dict.fromkeys(tuple(t) for t in triplets))
        ents = set(descriptions)
        rels = set()
        for h, r, t in uniq:
            ents.update((h, t))
            rels.add(r)
        return cls(sorted(ents), sorted(rels), uniq, descriptions)

    def head_filtered(self, network_entities: Iterable[str]) -> "KnowledgeBase":
        """Keep only triplets whose head is an entity node of the network."""
        keep = set(network_entities)
        trips = [t for t in self.triplets if t[0] in keep]
        return KnowledgeBase.from_records(trips, self.descriptions)


def load_triplets(path) -> list[tuple[str, str, str]]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(p.strip() for p in parts):
                raise MalformedRecord(lineno, "expected head, relation, tail")
            out.append(tuple(p.strip() for p in parts))
    return out


def load_descriptions(path) -> dict[str, str]:
    """JSON-lines records with keys ``id`` and ``text``."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    out = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(lineno, str(exc)) from None
            if not isinstance(rec, dict) or not isinstance(rec.get("id"), str) \
                    or not isinstance(rec.get("text"), str):
                raise MalformedRecord(lineno, "fields 'id' and 'text' must be strings")
            out[rec["id"]] = rec["text"]
    return out


def load_knowledge_base(triplet_path, description_path=None) -> KnowledgeBase:
    trips = load_triplets(triplet_path)
    descs = load_descriptions(description_path) if description_path else {}
    return KnowledgeBase.from_records(trips, descs)


# ---------------------------------------------------------------------------
# TransE


def transe_score(h, r, t) -> float:
    """Negative squared L2 translation distance ``-||h + r - t||^2``."""
    h, r, t = (np.asarray(v, dtype=np.float64) for v in (h, r, t))
    if not h.shape == r.shape == t.shape or h.ndim != 1:
        raise DimensionMismatch(f"shapes {h.shape}, {r.shape}, {t.shape}")
    d = h + r - t
    return -float(d @ d)


@dataclass(frozen=True)
class TransEConfig:
    dim: int = 64
    margin: float = 1.0
    lr: float = 0.1
    epochs: int = 200
    neg_per_pos: int = 1
    batch_size: int = 32
    seed: int = 0


@dataclass
class TransEState:
    entities: list[str]
    relations: list[str]
    entity_matrix: np.ndarray
    relation_matrix: np.ndarray
    history: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.entity_matrix.shape[1]

    @property
    def entity_vectors(self) -> dict[str, np.ndarray]:
        return {e: self.entity_matrix[i] for i, e in enumerate(self.entities)}

    @property
    def relation_vectors(self) -> dict[str, np.ndarray]:
        return {r: self.relation_matrix[i] for i, r in enumerate(self.relations)}

    def score(self, h: str, r: str, t: str) -> float:
        ei = self.entities.index
        return transe_score(self.entity_matrix[ei(h)],
                            self.relation_matrix[self.relations.index(r)],
                            self.entity_matrix[ei(t)])


def _unit_rows(M):
    norms = np.linalg.norm(M, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return M / norms


def train_transe(kb: KnowledgeBase, config: TransEConfig = TransEConfig()) -> TransEState:
    """Margin ranking training with head-or-tail corruption.

    Loss per pair is ``max(0, margin + d(h, r, t) - d(h', r, t'))`` with
    ``d = ||h + r - t||^2``; minibatch SGD, entity rows renormalized to
    unit length after every update. Only entities that occur in some
    triplet are embedded; description-only entities have no relational
    evidence and are left to the lookup fallback.
    """
    if not kb.triplets:
        raise EmptyKnowledgeBase("knowledge base has no triplets")
    if config.dim < 2:
        raise ValueError("TransE dimension must be >= 2")
    rng = np.random.default_rng(config.seed)
    entities = sorted({x for h, _, t in kb.triplets for x in (h, t)})
    n_ent, n_rel, u = len(entities), len(kb.relations), config.dim
    bound = 6.0 / math.sqrt(u)
    E = _unit_rows(rng.uniform(-bound, bound, size=(n_ent, u)))
    R = _unit_rows(rng.uniform(-bound, bound, size=(n_rel, u)))

    eidx = {e: i for i, e in enumerate(entities)}
    ridx = {r: i for i, r in enumerate(kb.relations)}
    trips = np.array([(eidx[h], ridx[r], eidx[t]) for h, r, t in kb.triplets], dtype=np.int64)
    pos = np.repeat(trips, config.neg_per_pos, axis=0)
    m = len(pos)
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(m)
        corrupt_head = rng.random(m) < 0.5
        # uniform replacement entity, never the original one
        offsets = rng.integers(1, n_ent, size=m) if n_ent > 1 else np.zeros(m, dtype=np.int64)
        epoch_loss = 0.0
        for start in range(0, m, config.batch_size):
            b = order[start : start + config.batch_size]
            h, r, t = pos[b, 0], pos[b, 1], pos[b, 2]
            hn, tn = h.copy(), t.copy()
            ch = corrupt_head[b]
            hn[ch] = (h[ch] + offsets[b][ch]) % n_ent
            tn[~ch] = (t[~ch] + offsets[b][~ch]) % n_ent

            dp = E[h] + R[r] - E[t]
            dn = E[hn] + R[r] - E[tn]
            loss = config.margin + np.sum(dp * dp, axis=1) - np.sum(dn * dn, axis=1)
            active = loss > 0
            epoch_loss += float(np.sum(np.maximum(loss, 0.0)))
            if not np.any(active):
                continue
            gp = 2.0 * dp[active]
            gn = 2.0 * dn[active]
            gE = np.zeros_like(E)
            gR = np.zeros_like(R)
            np.add.at(gE, h[active], gp)
            np.add.at(gE, t[active], -gp)
            np.add.at(gE, hn[active], -gn)
            np.add.at(gE, tn[active], gn)
            np.add.at(gR, r[active], gp - gn)
            scale = config.lr / len(b)
            E -= scale * gE
            R -= scale * gR
            E = _unit_rows(E)
        history.append(epoch_loss / m)
    return TransEState(entities, list(kb.relations), E, R, history)


# ---------------------------------------------------------------------------
# LDA


@dataclass(frozen=True)
class LDAConfig:
    topics: int = 64
    alpha: float | None = None  # defaults to 50 / topics
    beta: float = 0.01
    iters: int = 500
    seed: int = 0

    @property
    def alpha_value(self) -> float:
        return 50.0 / self.topics if self.alpha is None else self.alpha


@dataclass
class TopicModelState:
    topic_count: int
    vocabulary: list[str]
    topic_word: np.ndarray
    doc_topic: dict[str, np.ndarray]
    alpha: float
    beta: float
    gibbs_iters: int

    def theta(self, entity: str) -> np.ndarray:
        return textual_representation(self, entity)


@numba.njit(cache=True)
def _gibbs_sweep(words, docs, z, ndk, nkw, nk, alpha, beta, vbeta, uniforms):
    K = nk.shape[0]
    p = np.empty(K)
    for n in range(words.shape[0]):
        w, d, k = words[n], docs[n], z[n]
        ndk[d, k] -= 1
        nkw[k, w] -= 1
        nk[k] -= 1
        total = 0.0
        for j in range(K):
            total += (ndk[d, j] + alpha) * (nkw[j, w] + beta) / (nk[j] + vbeta)
            p[j] = total
        target = uniforms[n] * total
        k = 0
        while k < K - 1 and p[k] <= target:
            k += 1
        z[n] = k
        ndk[d, k] += 1
        nkw[k, w] += 1
        nk[k] += 1


def train_lda(kb: KnowledgeBase, config: LDAConfig = LDAConfig()) -> TopicModelState:
    """Collapsed Gibbs LDA over entity descriptions, one document per entity."""
    if config.topics < 2:
        raise ValueError("LDA needs at least 2 topics")
    ents = sorted(kb.descriptions)
    tokenized = {e: tokenize(kb.descriptions[e]) for e in ents}
    if not any(tokenized.values()):
        raise EmptyDescriptions("no description contains any token")
    vocab = sorted({w for toks in tokenized.values() for w in toks})
    widx = {w: i for i, w in enumerate(vocab)}
    words, docs = [], []
    for d, e in enumerate(ents):
        for w in tokenized[e]:
            words.append(widx[w])
            docs.append(d)
    words = np.array(words, dtype=np.int64)
    docs = np.array(docs, dtype=np.int64)

    K, V, D = config.topics, len(vocab), len(ents)
    alpha, beta = config.alpha_value, config.beta
    rng = np.random.default_rng(config.seed)
    z = rng.integers(0, K, size=len(words)).astype(np.int64)
    ndk = np.zeros((D, K), dtype=np.int64)
    nkw = np.zeros((K, V), dtype=np.int64)
    np.add.at(ndk, (docs, z), 1)
    np.add.at(nkw, (z, words), 1)
    nk = nkw.sum(axis=1)
    for _ in range(config.iters):
        _gibbs_sweep(words, docs, z, ndk, nkw, nk, alpha, beta, V * beta, rng.random(len(words)))

    phi = (nkw + beta) / (nk[:, None] + V * beta)
    nd = ndk.sum(axis=1)
    theta = (ndk + alpha) / (nd[:, None] + K * alpha)
    return TopicModelState(K, vocab, phi, {e: theta[d] for d, e in enumerate(ents)},
                           alpha, beta, config.iters)


def textual_representation(state: TopicModelState, entity: str) -> np.ndarray:
    theta = state.doc_topic.get(entity)
    if theta is None:
        return np.full(state.topic_count, 1.0 / state.topic_count)
    return theta.copy()


# ---------------------------------------------------------------------------
# fusion


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class GateState:
    gate_logits: np.ndarray

    @classmethod
    def zeros(cls, dim: int) -> "GateState":
        return cls(np.zeros(dim))

    @property
    def gate(self) -> np.ndarray:
        return sigmoid(self.gate_logits)


def fused_dim(dim: int, mode: str) -> int:
    return 2 * dim if mode == "concat" else dim


def fuse(e_s, e_d, gate, mode: str = "gated") -> np.ndarray:
    """Combine triplet and textual vectors (works row-wise on matrices too).

    ``gate`` is a :class:`GateState` or the raw gate logits.
    """
    e_s = np.asarray(e_s, dtype=np.float64)
    e_d = np.asarray(e_d, dtype=np.float64)
    if mode == "triplet_only":
        return e_s.copy()
    if mode == "textual_only":
        return e_d.copy()
    if mode == "concat":
        if e_s.shape[:-1] != e_d.shape[:-1]:
            raise DimensionMismatch(f"cannot concatenate {e_s.shape} and {e_d.shape}")
        return np.concatenate([e_s, e_d], axis=-1)
    if mode != "gated":
        raise ValueError(f"unknown fusion mode {mode!r}")
    logits = gate.gate_logits if isinstance(gate, GateState) else np.asarray(gate, dtype=np.float64)
    if e_s.shape != e_d.shape or e_s.shape[-1] != logits.shape[-1]:
        raise DimensionMismatch(f"e_s {e_s.shape}, e_d {e_d.shape}, gate {logits.shape}")
    g = sigmoid(logits)
    return g * e_s + (1.0 - g) * e_d


def fuse_gate_grad(e_s, e_d, gate_logits, upstream) -> np.ndarray:
    """Gradient of ``sum(upstream * fuse(e_s, e_d, g))`` w.r.t. the gate logits."""
    g = sigmoid(gate_logits)
    contrib = np.asarray(upstream) * (np.asarray(e_s) - np.asarray(e_d)) * (g * (1.0 - g))
    return contrib.reshape(-1, contrib.shape[-1]).sum(axis=0)


@dataclass
class EntityFeatures:
    """Per-entity triplet and textual vectors aligned to an entity order."""

    entity_ids: list[str]
    triplet: np.ndarray
    textual: np.ndarray

    def fused(self, gate_logits, mode: str = "gated") -> np.ndarray:
        return fuse(self.triplet, self.textual, gate_logits, mode)


def entity_features(entity_ids, transe: TransEState | None, lda: TopicModelState | None,
                    dim: int, seed: int = 0, topics: int | None = None) -> EntityFeatures:
    """Look up ``e_s`` and ``e_d`` for each entity node.

    Entities missing from the TransE vocabulary get a seeded random
    direction scaled to length ``1/sqrt(topics)``, the length of the uniform
    topic vector, so that absent knowledge on either side carries the same
    weight. Entities without a description get the uniform topic vector.
    """
    topics = dim if topics is None else topics
    rng = np.random.default_rng(seed)
    known = {} if transe is None else {e: i for i, e in enumerate(transe.entities)}
    if transe is not None and transe.dim != dim:
        raise DimensionMismatch(f"TransE dim {transe.dim} != {dim}")
    if lda is not None and lda.topic_count != topics:
        raise DimensionMismatch(f"LDA topics {lda.topic_count} != {topics}")
    S = np.empty((len(entity_ids), dim))
    T = np.empty((len(entity_ids), topics))
    for i, e in enumerate(entity_ids):
        # one draw per entity keeps the fallback independent of coverage
        fallback = rng.normal(size=dim)
        if e in known:
            S[i] = transe.entity_matrix[known[e]]
        else:
            S[i] = fallback / (np.linalg.norm(fallback) * np.sqrt(topics))
        T[i] = textual_representation(lda, e) if lda is not None else np.full(topics, 1.0 / topics)
    return EntityFeatures(list(entity_ids), S, T)


def write_embeddings(ids, matrix, path) -> None:
    """TSV rows of ``id`` followed by full-precision floats."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for e, row in zip(ids, np.asarray(matrix)):
            fh.write(e + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")


def read_embeddings(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    ids, rows = [], []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError:
                raise MalformedRecord(lineno, "non-numeric embedding value") from None
            ids.append(parts[0])
    if rows and len({len(r) for r in rows}) != 1:
        raise MalformedRecord(0, "ragged embedding rows")
    return ids, np.array(rows, dtype=np.float64).reshape(len(ids), -1)


def embedding_map(ids, matrix) -> Mapping[str, np.ndarray]:
    return {e: np.asarray(matrix)[i] for i, e in enumerate(ids)}
