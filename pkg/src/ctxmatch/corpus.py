"""Sentence pairs, external contexts, and context cleaning."""

from __future__ import annotations

import re
import unicodedata
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping


@dataclass(frozen=True)
class SentencePair:
    id: int
    text_a: str
    text_b: str
    label: int | None = None

    def __post_init__(self):
        if not self.text_a.strip() or not self.text_b.strip():
            raise ValueError(f"pair {self.id}: empty sentence")
        if self.label is not None and self.label not in (0, 1):
            raise ValueError(f"pair {self.id}: label must be 0 or 1, got {self.label!r}")


@dataclass(frozen=True)
class Context:
    sentence_id: str
    text: str
    retrieval_score: float
    source: str = ""

    def __post_init__(self):
        if not self.text or any(unicodedata.category(c) == "Cc" for c in self.text):
            raise ValueError(f"context for {self.sentence_id}: empty or contains control characters")
        if not self.retrieval_score >= 0:
            raise ValueError(f"context for {self.sentence_id}: negative retrieval score")


@dataclass(frozen=True)
class PairDataset:
    pairs: tuple[SentencePair, ...]
    name: str = ""

    def __post_init__(self):
        ids = [p.id for p in self.pairs]
        if len(set(ids)) != len(ids):
            raise ValueError(f"dataset {self.name!r}: duplicate pair ids")

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def labels(self) -> list[int | None]:
        return [p.label for p in self.pairs]


def sentence_id(pair_id: int, side: str) -> str:
    """Key of one side of a pair in a context store, e.g. ``"7a"``."""
    if side not in ("a", "b"):
        raise ValueError(f"side must be 'a' or 'b', got {side!r}")
    return f"{pair_id}{side}"


def load_pair_dataset(path, has_labels: bool = True, name: str | None = None) -> PairDataset:
    """Read ``text_a<TAB>text_b[<TAB>label]`` lines; blank lines are skipped."""
    path = Path(path)
    pairs = []
    with path.open(encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) not in ((3,) if has_labels else (2, 3)):
                raise ValueError(f"{path}:{lineno}: expected {'3' if has_labels else '2 or 3'} "
                                 f"tab-separated fields, got {len(fields)}")
            label = None
            if len(fields) == 3:
                if fields[2].strip() not in ("0", "1"):
                    raise ValueError(f"{path}:{lineno}: label must be 0 or 1, got {fields[2]!r}")
                label = int(fields[2])
            try:
                pairs.append(SentencePair(len(pairs), fields[0], fields[1], label))
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
    return PairDataset(tuple(pairs), name or path.stem)


def write_pair_dataset(path, dataset: PairDataset) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for p in dataset:
            fields = [p.text_a, p.text_b] + ([] if p.label is None else [str(p.label)])
            fh.write("\t".join(fields) + "\n")


# ---------------------------------------------------------------- cleaning

@dataclass(frozen=True)
class CleaningRules:
    mask_token: str = "<MASK>"
    mask_emails: bool = True
    mask_phones: bool = True
    min_phone_digits: int = 7
    min_length: int = 4


_TAG = re.compile(r"</?[A-Za-z][^<>]*>")
_EMAIL = re.compile(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+")
_WS = re.compile(r"\s+")


def _phone_pattern(min_digits: int) -> re.Pattern:
    # digit runs, optionally split by single spaces or hyphens
    return re.compile(r"\+?\d(?:[ -]?\d){%d,}" % (min_digits - 1))


def pii_patterns(rules: CleaningRules = CleaningRules()) -> list[re.Pattern]:
    pats = []
    if rules.mask_emails:
        pats.append(_EMAIL)
    if rules.mask_phones:
        pats.append(_phone_pattern(rules.min_phone_digits))
    return pats


def clean_context(raw: str, rules: CleaningRules = CleaningRules()) -> str | None:
    """Strip tags, collapse whitespace and mask personal information.

    Returns None when the cleaned text is shorter than ``rules.min_length``.
    """
    text = "".join(" " if unicodedata.category(c) == "Cc" else c for c in raw)
    while True:
        stripped = _TAG.sub(lambda m: m.group(0) if m.group(0) == rules.mask_token else " ", text)
        if stripped == text:
            break
        text = stripped
    text = _WS.sub(" ", text).strip()
    for pat in pii_patterns(rules):
        text = pat.sub(rules.mask_token, text)
    text = _WS.sub(" ", text).strip()
    if len(text) < rules.min_length:
        return None
    return text


# ---------------------------------------------------------------- context store

ContextStore = Mapping[str, tuple[Context, ...]]


def _sort_group(contexts) -> tuple[Context, ...]:
    return tuple(sorted(contexts, key=lambda c: (-c.retrieval_score, c.text)))


def load_context_store(path, rules: CleaningRules = CleaningRules()) -> dict[str, tuple[Context, ...]]:
    """Read ``sentence_id<TAB>score<TAB>source<TAB>text`` records.

    Texts pass through ``clean_context``; rejected ones are dropped. Groups are
    ordered by descending score, ties by ascending text.
    """
    path = Path(path)
    groups: dict[str, list[Context]] = defaultdict(list)
    with path.open(encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t", 3)
            if len(fields) != 4 or not fields[0]:
                raise ValueError(f"{path}:{lineno}: expected sentence_id, score, source, text")
            try:
                score = float(fields[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad score {fields[1]!r}") from None
            if not score >= 0 or score == float("inf"):
                raise ValueError(f"{path}:{lineno}: score must be finite and non-negative")
            text = clean_context(fields[3], rules)
            if text is None:
                continue
            groups[fields[0]].append(Context(fields[0], text, score, fields[2]))
    return {sid: _sort_group(cs) for sid, cs in sorted(groups.items())}


def write_context_store(path, records) -> None:
    """Write ``(sentence_id, score, source, text)`` tuples or Context objects."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            if isinstance(r, Context):
                r = (r.sentence_id, r.retrieval_score, r.source, r.text)
            sid, score, source, text = r
            fh.write(f"{sid}\t{float(score)!r}\t{source}\t{text}\n")


@dataclass(frozen=True)
class CorpusDocument:
    source: str
    text: str


def load_raw_corpus(path, rules: CleaningRules = CleaningRules()) -> list[CorpusDocument]:
    """One raw document per line; provenance is ``<file name>:<line>``."""
    path = Path(path)
    docs = []
    with path.open(encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = clean_context(line, rules)
            if text is not None:
                docs.append(CorpusDocument(f"{path.name}:{lineno}", text))
    return docs

