"""Loading, featurization and splitting of the text-rich document network.

File formats
------------
documents
    One JSON object per line with keys ``id`` (string), ``text`` (string)
    and optionally ``label`` (integer class index or null). Blank lines
    are skipped.
edges
    Two document ids separated by a tab, one pair per line. Lines starting
    with ``#`` are comments.
splits
    Three lines ``train: a,b,c``, ``val: ...`` and ``test: ...``.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateId,
    EmptyCorpus,
    MalformedRecord,
    MissingFile,
    RatioOutOfRange,
    TooFewLabeled,
    UnknownId,
)

log = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test", "unlabeled")
_TOKEN_RE = re.compile(r"[0-9a-z]+")


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    label: int | None = None
    split: str = "unlabeled"


class DocumentSet(Sequence[Document]):
    """Ordered, id-unique collection of documents."""

    def __init__(self, docs: Iterable[Document] = ()):
        self._docs = list(docs)
        self._index: dict[str, int] = {}
        for i, d in enumerate(self._docs):
            if not d.id:
                raise ValueError("document id must be nonempty")
            if d.id in self._index:
                raise DuplicateId(d.id)
            self._index[d.id] = i

    def __getitem__(self, i):
        return self._docs[i]

    def __len__(self):
        return len(self._docs)

    def __contains__(self, doc_id):
        return doc_id in self._index

    def index(self, doc_id: str) -> int:
        try:
            return self._index[doc_id]
        except KeyError:
            raise UnknownId(doc_id) from None

    def get(self, doc_id: str) -> Document:
        return self._docs[self.index(doc_id)]

    @property
    def ids(self) -> list[str]:
        return [d.id for d in self._docs]

    @property
    def class_count(self) -> int:
        labels = [d.label for d in self._docs if d.label is not None]
        return max(labels) + 1 if labels else 0


@dataclass
class TextRichGraph:
    documents: DocumentSet
    edges: frozenset[tuple[str, str]]
    attributes: np.ndarray
    vocabulary: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.attributes.shape[0] != len(self.documents):
            raise ValueError("attribute rows must match document count")
        for a, b in self.edges:
            if a == b:
                raise ValueError(f"self-loop edge on {a!r}")
            self.documents.index(a)
            self.documents.index(b)

    @property
    def class_count(self) -> int:
        return self.documents.class_count


@dataclass(frozen=True)
class SplitSpec:
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int | None = None

    def __post_init__(self):
        tr, va, te = set(self.train_ids), set(self.val_ids), set(self.test_ids)
        if tr & va or tr & te or va & te:
            raise ValueError("train/val/test ids must be pairwise disjoint")

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train_ids), len(self.val_ids), len(self.test_ids)


@dataclass(frozen=True)
class VocabConfig:
    min_df: int = 1
    max_features: int | None = None
    lowercase: bool = True
    min_token_length: int = 2


def tokenize(text: str, lowercase: bool = True, min_length: int = 2) -> list[str]:
    """Split on non-alphanumeric runs and drop tokens shorter than ``min_length``."""
    if lowercase:
        text = text.lower()
        toks = _TOKEN_RE.findall(text)
    else:
        toks = re.findall(r"[0-9A-Za-z]+", text)
    return [t for t in toks if len(t) >= min_length]


def _check_file(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    return path


def load_documents(path) -> DocumentSet:
    """Read a JSON-lines documents file, preserving record order."""
    path = _check_file(path)
    docs = []
    seen = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(lineno, str(exc)) from None
            if not isinstance(rec, dict):
                raise MalformedRecord(lineno, "expected an object")
            doc_id, text = rec.get("id"), rec.get("text")
            if not isinstance(doc_id, str) or not doc_id or not isinstance(text, str):
                raise MalformedRecord(lineno, "fields 'id' and 'text' must be strings")
            label = rec.get("label")
            if label is not None and (isinstance(label, bool) or not isinstance(label, int) or label < 0):
                raise MalformedRecord(lineno, "label must be a nonnegative integer")
            if doc_id in seen:
                raise DuplicateId(doc_id)
            seen.add(doc_id)
            docs.append(Document(doc_id, text, label, rec.get("split", "unlabeled")))
    return DocumentSet(docs)


def write_documents(docs: Iterable[Document], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in docs:
            rec = {"id": d.id, "text": d.text}
            if d.label is not None:
                rec["label"] = d.label
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def canonical_edge(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def parse_edges(lines: Iterable[str], docs: DocumentSet) -> tuple[frozenset, int]:
    edges = set()
    self_loops = 0
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise MalformedRecord(lineno, "expected two tab-separated ids")
        a, b = parts[0].strip(), parts[1].strip()
        for x in (a, b):
            if x not in docs:
                raise UnknownId(x)
        if a == b:
            self_loops += 1
            continue
        edges.add(canonical_edge(a, b))
    return frozenset(edges), self_loops


def load_edges(path, docs: DocumentSet) -> frozenset[tuple[str, str]]:
    """Read an undirected edge list; duplicate and reversed pairs collapse."""
    path = _check_file(path)
    with path.open(encoding="utf-8") as fh:
        edges, self_loops = parse_edges(fh, docs)
    if self_loops:
        log.warning("dropped %d self-loop edge(s) from %s", self_loops, path)
    return edges


def write_edges(edges, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for a, b in sorted(edges):
            fh.write(f"{a}\t{b}\n")


def build_attributes(docs: DocumentSet, vocab: VocabConfig = VocabConfig()):
    """TF-IDF features with ``tf = count / doc_length`` and ``idf = ln(n / df)``.

    Returns the ``n x f`` matrix and the sorted list of retained terms.
    """
    if len(docs) == 0:
        raise EmptyCorpus("cannot featurize an empty document set")
    tokenized = [tokenize(d.text, vocab.lowercase, vocab.min_token_length) for d in docs]
    df = Counter()
    for toks in tokenized:
        df.update(set(toks))
    terms = [t for t, c in df.items() if c >= vocab.min_df]
    if vocab.max_features is not None and len(terms) > vocab.max_features:
        terms.sort(key=lambda t: (-df[t], t))
        terms = terms[: vocab.max_features]
    terms.sort()
    col = {t: j for j, t in enumerate(terms)}
    n = len(docs)
    idf = np.array([math.log(n / df[t]) for t in terms], dtype=np.float64)
    X = np.zeros((n, len(terms)), dtype=np.float64)
    for i, toks in enumerate(tokenized):
        if not toks:
            continue
        length = len(toks)
        for t, c in Counter(toks).items():
            j = col.get(t)
            if j is not None:
                X[i, j] = (c / length) * idf[j]
    return X, terms


def load_graph(doc_path, edge_path, vocab: VocabConfig = VocabConfig()) -> TextRichGraph:
    docs = load_documents(doc_path)
    edges = load_edges(edge_path, docs)
    X, terms = build_attributes(docs, vocab)
    return TextRichGraph(docs, edges, X, terms)


def _apportion(total: int, weights: Sequence[int]) -> list[int]:
    """Largest-remainder split of ``total`` proportional to ``weights``."""
    wsum = sum(weights)
    if wsum == 0:
        return [0] * len(weights)
    quotas = [total * w / wsum for w in weights]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(weights)), key=lambda k: (-(quotas[k] - counts[k]), k))
    for k in order[: total - sum(counts)]:
        counts[k] += 1
    return counts


def make_splits(docs: DocumentSet, ratios=(0.1, 0.1, 0.8), seed: int = 0) -> SplitSpec:
    """Stratified random train/val/test split over labeled documents.

    Sizes are ``floor(ratio * n_labeled)`` for train and val; test takes
    the remainder when the ratios sum to one, else its own floor.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 or r > 1 for r in ratios) or sum(ratios) > 1 + 1e-9:
        raise RatioOutOfRange(f"ratios must be 3 nonnegative values summing to <= 1, got {ratios}")
    labeled = [d for d in docs if d.label is not None]
    n = len(labeled)
    by_class: dict[int, list[str]] = {}
    for d in labeled:
        by_class.setdefault(d.label, []).append(d.id)
    classes = sorted(by_class)
    n_parts = sum(1 for r in ratios if r > 0)
    for c in classes:
        if len(by_class[c]) < n_parts:
            raise TooFewLabeled(c, len(by_class[c]), n_parts)

    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    if abs(sum(ratios) - 1.0) <= 1e-9:
        n_test = n - n_train - n_val
    else:
        n_test = math.floor(ratios[2] * n + 1e-9)

    rng = np.random.default_rng(seed)
    sizes = [len(by_class[c]) for c in classes]
    per_train = _apportion(n_train, sizes)
    left = [s - t for s, t in zip(sizes, per_train)]
    per_val = _apportion(n_val, left)
    left = [s - v for s, v in zip(left, per_val)]
    per_test = _apportion(n_test, left)

    train, val, test = [], [], []
    for k, c in enumerate(classes):
        ids = list(by_class[c])
        perm = rng.permutation(len(ids))
        ids = [ids[p] for p in perm]
        a, b = per_train[k], per_train[k] + per_val[k]
        train += ids[:a]
        val += ids[a:b]
        test += ids[b : b + per_test[k]]
    order = {d.id: i for i, d in enumerate(docs)}
    key = order.__getitem__
    return SplitSpec(tuple(sorted(train, key=key)), tuple(sorted(val, key=key)),
                     tuple(sorted(test, key=key)), seed)


def write_splits(split: SplitSpec, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("train: " + ",".join(split.train_ids) + "\n")
        fh.write("val: " + ",".join(split.val_ids) + "\n")
        fh.write("test: " + ",".join(split.test_ids) + "\n")


def load_splits(path, docs: DocumentSet | None = None) -> SplitSpec:
    path = _check_file(path)
    parts: dict[str, tuple[str, ...]] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            name, sep, rest = line.partition(":")
            name = name.strip()
            if not sep or name not in ("train", "val", "test") or name in parts:
                raise MalformedRecord(lineno, "expected 'train:', 'val:' or 'test:'")
            ids = tuple(x.strip() for x in rest.strip().split(",") if x.strip())
            if docs is not None:
                for x in ids:
                    if x not in docs:
                        raise UnknownId(x)
            parts[name] = ids
    return SplitSpec(parts.get("train", ()), parts.get("val", ()), parts.get("test", ()))
