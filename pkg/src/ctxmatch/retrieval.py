"""Okapi BM25 over an inverted index: the local stand-in for a web search engine."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import tokenize


@dataclass(frozen=True)
class RetrievalParams:
    k1: float = 1.2
    b: float = 0.75
    top_n: int = 10

    def __post_init__(self):
        if not self.k1 > 0:
            raise ValueError("k1 must be > 0")
        if not 0 <= self.b <= 1:
            raise ValueError("b must lie in [0, 1]")
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")


class InvertedIndex:
    """Term -> postings map plus document length statistics.

    Postings are stored as parallel ``(doc_ids, term_freqs)`` int arrays with
    ascending document ids.
    """

    def __init__(self, postings: dict[str, tuple[np.ndarray, np.ndarray]], doc_lengths: np.ndarray,
                 documents: Sequence[str], mode: str = "word"):
        self.postings_map = postings
        self.doc_lengths = np.asarray(doc_lengths, dtype=np.int64)
        self.documents = list(documents)
        self.mode = mode
        self.doc_count = len(self.doc_lengths)
        self.avg_doc_length = float(self.doc_lengths.sum()) / self.doc_count
        self.idf = {t: bm25_idf(self.doc_count, len(d)) for t, (d, _) in postings.items()}

    @property
    def vocabulary(self) -> dict[str, list[tuple[int, int]]]:
        return {t: self.postings(t) for t in self.postings_map}

    def postings(self, term: str) -> list[tuple[int, int]]:
        if term not in self.postings_map:
            return []
        docs, tfs = self.postings_map[term]
        return list(zip(docs.tolist(), tfs.tolist()))

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "documents": self.documents,
            "doc_lengths": self.doc_lengths.tolist(),
            "postings": {t: [d.tolist(), f.tolist()] for t, (d, f) in sorted(self.postings_map.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "InvertedIndex":
        postings = {t: (np.asarray(d, dtype=np.int64), np.asarray(f, dtype=np.int64))
                    for t, (d, f) in obj["postings"].items()}
        return cls(postings, obj["doc_lengths"], obj["documents"], obj.get("mode", "word"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "InvertedIndex":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def bm25_idf(doc_count: int, doc_freq: int) -> float:
    """Robertson idf, floored at 0 so terms in most documents never subtract."""
    return max(0.0, math.log((doc_count - doc_freq + 0.5) / (doc_freq + 0.5)))


def build_index(documents: Sequence[str], mode: str = "word") -> InvertedIndex:
    if not documents:
        raise ValueError("build_index: no documents")
    lists: dict[str, tuple[list[int], list[int]]] = {}
    lengths = []
    for doc_id, text in enumerate(documents):
        tokens = tokenize(text, mode)
        lengths.append(len(tokens))
        for term, tf in Counter(tokens).items():
            d, f = lists.setdefault(term, ([], []))
            d.append(doc_id)
            f.append(tf)
    postings = {t: (np.asarray(d, dtype=np.int64), np.asarray(f, dtype=np.int64))
                for t, (d, f) in lists.items()}
    return InvertedIndex(postings, np.asarray(lengths), documents, mode)


def score(index: InvertedIndex, params: RetrievalParams, query: Sequence[str], doc: int) -> float:
    if not 0 <= doc < index.doc_count:
        raise ValueError(f"unknown document id {doc} (index has {index.doc_count})")
    k1, b = params.k1, params.b
    dl = int(index.doc_lengths[doc])
    s = 0.0
    for term in query:
        if term not in index.postings_map:
            continue
        docs, tfs = index.postings_map[term]
        pos = int(np.searchsorted(docs, doc))
        if pos == len(docs) or docs[pos] != doc:
            continue
        tf = int(tfs[pos])
        s += index.idf[term] * (tf * (k1 + 1)) / (tf + k1 * (1 - b + b * dl / index.avg_doc_length))
    return s


def score_all(index: InvertedIndex, params: RetrievalParams, query: Sequence[str]) -> np.ndarray:
    """BM25 of ``query`` against every document, accumulated term by term."""
    k1, b = params.k1, params.b
    scores = np.zeros(index.doc_count)
    for term in query:
        if term not in index.postings_map:
            continue
        docs, tfs = index.postings_map[term]
        dl = index.doc_lengths[docs]
        scores[docs] += index.idf[term] * (tfs * (k1 + 1)) / (tfs + k1 * (1 - b + b * dl / index.avg_doc_length))
    return scores


def retrieve(index: InvertedIndex, params: RetrievalParams, sentence: str) -> list[tuple[int, float]]:
    """Top ``params.top_n`` documents by descending score, ties by ascending id.

    Zero-score documents and documents identical to ``sentence`` are skipped.
    """
    scores = score_all(index, params, tokenize(sentence, index.mode))
    hits = np.flatnonzero(scores > 0)
    order = hits[np.lexsort((hits, -scores[hits]))]
    out = []
    for doc in order.tolist():
        if index.documents and index.documents[doc] == sentence:
            continue
        out.append((doc, float(scores[doc])))
        if len(out) == params.top_n:
            break
    return out
