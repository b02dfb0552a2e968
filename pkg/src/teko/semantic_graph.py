"""Assembly of the heterogeneous document/entity network.

Graph file format
-----------------
A text file with five sections, each introduced by a header line::

    [doc_nodes]      one document id per line
    [ent_nodes]      one entity id per line
    [edges_dd]       doc_id<TAB>doc_id
    [edges_de]       doc_id<TAB>entity_id
    [edges_ee]       entity_id<TAB>entity_id

Lines starting with ``#`` are comments. Node order in the file is the
canonical order used by every downstream matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .corpus_io import TextRichGraph, canonical_edge
from .entity_linking import AnnotationSet
from .errors import (
    InconsistentIds,
    MalformedRecord,
    MissingFile,
    ThresholdOutOfRange,
    TooFewEntities,
    UnknownTypePair,
    ZeroVector,
)

DOC = "DOC"
ENT = "ENT"
NODE_TYPES = (DOC, ENT)


@dataclass(frozen=True)
class HeteroGraph:
    doc_ids: tuple[str, ...]
    ent_ids: tuple[str, ...]
    edges_dd: frozenset[tuple[str, str]]
    edges_de: frozenset[tuple[str, str]]
    edges_ee: frozenset[tuple[str, str]]

    def __post_init__(self):
        docs, ents = set(self.doc_ids), set(self.ent_ids)
        if len(docs) != len(self.doc_ids) or len(ents) != len(self.ent_ids):
            raise InconsistentIds("duplicate node id")
        if docs & ents:
            raise InconsistentIds(f"ids used as both doc and entity: {sorted(docs & ents)[:5]}")
        for a, b in self.edges_dd:
            if a not in docs or b not in docs or a == b:
                raise InconsistentIds(f"bad doc edge ({a}, {b})")
        for d, e in self.edges_de:
            if d not in docs or e not in ents:
                raise InconsistentIds(f"bad doc-entity edge ({d}, {e})")
        for a, b in self.edges_ee:
            if a not in ents or b not in ents or a == b:
                raise InconsistentIds(f"bad entity edge ({a}, {b})")

    @property
    def n_doc(self) -> int:
        return len(self.doc_ids)

    @property
    def n_ent(self) -> int:
        return len(self.ent_ids)

    @property
    def n_nodes(self) -> int:
        return self.n_doc + self.n_ent

    @property
    def node_ids(self) -> list[str]:
        return list(self.doc_ids) + list(self.ent_ids)

    @property
    def node_type(self) -> dict[str, str]:
        out = {d: DOC for d in self.doc_ids}
        out.update((e, ENT) for e in self.ent_ids)
        return out

    def type_slice(self, node_type: str) -> slice:
        if node_type == DOC:
            return slice(0, self.n_doc)
        if node_type == ENT:
            return slice(self.n_doc, self.n_nodes)
        raise UnknownTypePair(f"unknown node type {node_type!r}")

    def adjacency(self) -> np.ndarray:
        """Dense symmetric 0/1 adjacency over all nodes, without self-loops."""
        pos = {v: i for i, v in enumerate(self.node_ids)}
        A = np.zeros((self.n_nodes, self.n_nodes))
        for edges in (self.edges_dd, self.edges_de, self.edges_ee):
            for a, b in edges:
                A[pos[a], pos[b]] = A[pos[b], pos[a]] = 1.0
        return A

    def doc_graph(self) -> "HeteroGraph":
        return HeteroGraph(self.doc_ids, (), self.edges_dd, frozenset(), frozenset())


def entity_similarity(e_i, e_j) -> float:
    """Cosine of the angle between two embedding vectors."""
    e_i = np.asarray(e_i, dtype=np.float64)
    e_j = np.asarray(e_j, dtype=np.float64)
    if e_i.shape != e_j.shape:
        raise ValueError(f"dimension mismatch {e_i.shape} vs {e_j.shape}")
    ni, nj = np.linalg.norm(e_i), np.linalg.norm(e_j)
    if ni == 0 or nj == 0:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    return float(np.clip(e_i @ e_j / (ni * nj), -1.0, 1.0))


def similarity_matrix(M) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    norms = np.linalg.norm(M, axis=1)
    if np.any(norms == 0):
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    U = M / norms[:, None]
    return np.clip(U @ U.T, -1.0, 1.0)


def build_entity_edges(embeddings: Mapping[str, np.ndarray], threshold: float):
    """All pairs with cosine similarity ``>= threshold`` as sorted id pairs."""
    if not -1.0 <= threshold <= 1.0:
        raise ThresholdOutOfRange(f"delta_sim={threshold} outside [-1, 1]")
    ids = sorted(embeddings)
    if len(ids) < 2:
        raise TooFewEntities(f"need >= 2 entities, got {len(ids)}")
    S = similarity_matrix(np.stack([embeddings[e] for e in ids]))
    rows, cols = np.nonzero(np.triu(S >= threshold, k=1))
    return frozenset((ids[i], ids[j]) for i, j in zip(rows, cols))


def assemble(g: TextRichGraph, ann: AnnotationSet, e_w=frozenset()) -> HeteroGraph:
    """Merge the document network, doc-entity links and entity edges.

    Entity nodes are every annotated entity plus every endpoint of
    ``e_w``; ids are sorted within each type, documents first.
    """
    doc_ids = tuple(sorted(g.documents.ids))
    docs = set(doc_ids)
    de = set()
    for m in ann.mentions:
        if m.doc_id not in docs:
            raise InconsistentIds(f"annotation references unknown document {m.doc_id!r}")
        de.add((m.doc_id, m.entity_id))
    ents = {e for _, e in de}
    ee = set()
    for a, b in e_w:
        if a == b:
            continue
        ee.add(canonical_edge(a, b))
        ents.update((a, b))
    if ents & docs:
        raise InconsistentIds(f"entity ids collide with document ids: {sorted(ents & docs)[:5]}")
    return HeteroGraph(doc_ids, tuple(sorted(ents)), frozenset(g.edges), frozenset(de), frozenset(ee))


def normalized_adjacency(h: HeteroGraph, src_type: str, dst_type: str) -> np.ndarray:
    """Degree-normalized adjacency block of shape ``n_src x n_dst``.

    Same-type blocks use ``D^-1/2 (A + I) D^-1/2`` with degrees taken within
    that type's subgraph. Cross-type blocks scale each bipartite edge by
    ``1 / sqrt((deg_i + 1) (deg_j + 1))`` using total degrees, and carry no
    self-loops.
    """
    if src_type not in NODE_TYPES or dst_type not in NODE_TYPES:
        raise UnknownTypePair(f"({src_type}, {dst_type})")
    A = h.adjacency()
    si, sj = h.type_slice(src_type), h.type_slice(dst_type)
    if src_type == dst_type:
        At = A[si, si] + np.eye(si.stop - si.start)
        dinv = 1.0 / np.sqrt(At.sum(axis=1))
        return dinv[:, None] * At * dinv[None, :]
    deg = A.sum(axis=1) + 1.0
    dinv = 1.0 / np.sqrt(deg)
    return dinv[si, None] * A[si, sj] * dinv[None, sj]


def full_normalized_adjacency(h: HeteroGraph) -> np.ndarray:
    """All four type blocks stitched into one ``n x n`` matrix."""
    out = np.zeros((h.n_nodes, h.n_nodes))
    for s in NODE_TYPES:
        for d in NODE_TYPES:
            out[h.type_slice(s), h.type_slice(d)] = normalized_adjacency(h, s, d)
    return out


def write_graph(h: HeteroGraph, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("[doc_nodes]\n")
        fh.writelines(f"{d}\n" for d in h.doc_ids)
        fh.write("[ent_nodes]\n")
        fh.writelines(f"{e}\n" for e in h.ent_ids)
        for name, edges in (("edges_dd", h.edges_dd), ("edges_de", h.edges_de),
                            ("edges_ee", h.edges_ee)):
            fh.write(f"[{name}]\n")
            fh.writelines(f"{a}\t{b}\n" for a, b in sorted(edges))


def read_graph(path) -> HeteroGraph:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    sections: dict[str, list] = {k: [] for k in
                                 ("doc_nodes", "ent_nodes", "edges_dd", "edges_de", "edges_ee")}
    current = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                if current not in sections:
                    raise MalformedRecord(lineno, f"unknown section {line}")
                continue
            if current is None:
                raise MalformedRecord(lineno, "record before first section header")
            if current.startswith("edges"):
                parts = line.split("\t")
                if len(parts) != 2:
                    raise MalformedRecord(lineno, "expected two tab-separated ids")
                sections[current].append(tuple(parts))
            else:
                sections[current].append(line)
    return HeteroGraph(
        tuple(sections["doc_nodes"]),
        tuple(sections["ent_nodes"]),
        frozenset(canonical_edge(*e) for e in sections["edges_dd"]),
        frozenset(sections["edges_de"]),
        frozenset(canonical_edge(*e) for e in sections["edges_ee"]),
    )
