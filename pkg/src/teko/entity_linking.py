"""Dictionary entity linker and annotation filtering.

The local linker is a greedy longest-match annotator over a surface-form
lexicon. Output from an external linker enters through
:func:`load_annotations` instead.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .corpus_io import DocumentSet
from .errors import (
    MalformedRecord,
    MissingFile,
    PriorOutOfRange,
    ScoreOutOfRange,
    ThresholdOutOfRange,
    UnknownId,
)

_WORD_RE = re.compile(r"[0-9a-z]+")


def normalize_phrase(phrase: str) -> str:
    """Lowercase and collapse any non-alphanumeric run to a single space."""
    return " ".join(_WORD_RE.findall(phrase.lower()))


@dataclass
class LinkerLexicon:
    surface_forms: dict[str, list[tuple[str, float]]] = field(default_factory=dict)

    def __len__(self):
        return len(self.surface_forms)

    def add(self, phrase: str, entity_id: str, prior: float) -> None:
        if not 0.0 <= prior <= 1.0:
            raise PriorOutOfRange(f"prior {prior} for {phrase!r} outside [0, 1]")
        key = normalize_phrase(phrase)
        if not key:
            raise ValueError(f"phrase {phrase!r} has no word characters")
        cands = self.surface_forms.setdefault(key, [])
        cands.append((entity_id, float(prior)))
        # stable: equal priors keep file order
        cands.sort(key=lambda c: -c[1])

    @property
    def max_phrase_tokens(self) -> int:
        return max((k.count(" ") + 1 for k in self.surface_forms), default=0)


@dataclass(frozen=True)
class Mention:
    doc_id: str
    entity_id: str
    span: tuple[int, int]
    score: float
    span_unknown: bool = False


@dataclass
class AnnotationSet:
    mentions: list[Mention]
    threshold_used: float

    def __len__(self):
        return len(self.mentions)

    def pairs(self) -> set[tuple[str, str]]:
        return {(m.doc_id, m.entity_id) for m in self.mentions}

    @property
    def entity_ids(self) -> list[str]:
        return sorted({m.entity_id for m in self.mentions})


def load_lexicon(path) -> LinkerLexicon:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    lex = LinkerLexicon()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise MalformedRecord(lineno, "expected phrase, entity id, prior")
            phrase, ent, prior = parts
            try:
                p = float(prior)
            except ValueError:
                raise MalformedRecord(lineno, f"prior {prior!r} is not a number") from None
            if not ent.strip() or not normalize_phrase(phrase):
                raise MalformedRecord(lineno, "empty phrase or entity id")
            lex.add(phrase, ent.strip(), p)
    return lex


def annotate(docs: DocumentSet, lexicon: LinkerLexicon) -> list[Mention]:
    """Greedy left-to-right longest-match linking.

    Each matched span emits a single mention for the top-prior candidate.
    Output is ordered by ``(doc_id, span start)``.
    """
    if len(lexicon) == 0:
        raise ValueError("lexicon is empty")
    max_len = lexicon.max_phrase_tokens
    out = []
    for doc in docs:
        words = list(_WORD_RE.finditer(doc.text.lower()))
        pos = 0
        while pos < len(words):
            for width in range(min(max_len, len(words) - pos), 0, -1):
                key = " ".join(m.group() for m in words[pos : pos + width])
                cands = lexicon.surface_forms.get(key)
                if cands:
                    ent, prior = cands[0]
                    span = (words[pos].start(), words[pos + width - 1].end())
                    out.append(Mention(doc.id, ent, span, prior))
                    pos += width
                    break
            else:
                pos += 1
    out.sort(key=lambda m: (m.doc_id, m.span[0]))
    return out


def filter_mentions(mentions: Iterable[Mention], threshold: float) -> AnnotationSet:
    """Keep mentions with ``score >= threshold``, one per (doc, entity) pair.

    The surviving mention of a pair is its highest-scoring one (earliest on
    ties), so raising the threshold only ever removes pairs.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ThresholdOutOfRange(f"delta_tag={threshold} outside [0, 1]")
    best: dict[tuple[str, str], Mention] = {}
    for m in mentions:
        if m.score < threshold:
            continue
        key = (m.doc_id, m.entity_id)
        cur = best.get(key)
        if cur is None or m.score > cur.score:
            best[key] = m
    kept = sorted(best.values(), key=lambda m: (m.doc_id, m.span[0], m.entity_id))
    return AnnotationSet(kept, threshold)


def load_annotations(path, docs: DocumentSet) -> list[Mention]:
    """Read ``doc_id, entity_id, score [, start, end]`` TSV records."""
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
            if len(parts) not in (3, 5):
                raise MalformedRecord(lineno, "expected 3 or 5 tab-separated fields")
            doc_id, ent = parts[0], parts[1]
            if doc_id not in docs:
                raise UnknownId(doc_id)
            try:
                score = float(parts[2])
            except ValueError:
                raise MalformedRecord(lineno, f"score {parts[2]!r} is not a number") from None
            if not 0.0 <= score <= 1.0:
                raise ScoreOutOfRange(f"score {score} at line {lineno} outside [0, 1]")
            if len(parts) == 5:
                try:
                    start, end = int(parts[3]), int(parts[4])
                except ValueError:
                    raise MalformedRecord(lineno, "span offsets must be integers") from None
                if not 0 <= start < end <= len(docs.get(doc_id).text):
                    raise MalformedRecord(lineno, f"span ({start}, {end}) out of document bounds")
                out.append(Mention(doc_id, ent, (start, end), score))
            else:
                out.append(Mention(doc_id, ent, (0, 0), score, span_unknown=True))
    return out


def write_annotations(mentions: Iterable[Mention], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for m in mentions:
            if m.span_unknown:
                fh.write(f"{m.doc_id}\t{m.entity_id}\t{m.score!r}\n")
            else:
                fh.write(f"{m.doc_id}\t{m.entity_id}\t{m.score!r}\t{m.span[0]}\t{m.span[1]}\n")
