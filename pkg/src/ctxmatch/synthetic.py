"""Synthetic pairs whose match label is only recoverable from external contexts.

Each sentence names a made-up alias (unique across the whole dataset) inside
a short question template. The alias belongs to a hidden topic; two sentences
match iff their topics agree. The topic keyword never appears in a sentence,
only in that sentence's *informative* contexts. Every sentence also gets
*distractor* contexts: near-copies of the sentence that BM25 ranks above the
informative ones.

Informative contexts of a positive pair mention the partner sentence's alias;
those of a negative pair mention a fresh alias that occurs nowhere else.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import PairDataset, SentencePair, write_pair_dataset

TOPICS: dict[str, tuple[str, ...]] = {
    "loan": ("mortgage",),
    "card": ("debit",),
    "fund": ("stocks",),
    "tax": ("levy",),
}

SENTENCE_TEMPLATES = (
    "how about {x}",
    "rate of {x}",
    "explain {x} please",
    "apply for {x}",
    "tell me {x}",
    "{x} available now",
    "need {x} help",
    "news on {x}",
)

FILLERS = ("today", "online", "quickly", "guide", "question", "forum", "thanks")

CONTEXT_TEMPLATES = (
    "{x} and {p} mean {kw}",
    "{p} or {x} denotes {kw}",
    "{x} alias {p} concerns {kw}",
)

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class SyntheticSentence:
    alias: str
    topic: str
    text: str


@dataclass(frozen=True)
class SyntheticPair:
    a: SyntheticSentence
    b: SyntheticSentence
    label: int


@dataclass
class SyntheticData:
    train: PairDataset
    test: PairDataset
    corpus: list[str]
    train_meta: list[SyntheticPair]
    test_meta: list[SyntheticPair]

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"train_pairs": out / "train.tsv", "test_pairs": out / "test.tsv", "corpus": out / "corpus.txt"}
        write_pair_dataset(paths["train_pairs"], self.train)
        write_pair_dataset(paths["test_pairs"], self.test)
        paths["corpus"].write_text("".join(line + "\n" for line in self.corpus), encoding="utf-8")
        return paths


class _AliasFactory:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.used: set[str] = set()
        reserved = {w for t in SENTENCE_TEMPLATES + CONTEXT_TEMPLATES for w in t.split()}
        reserved |= set(FILLERS) | {k for kws in TOPICS.values() for k in kws}
        self.used |= reserved

    def __call__(self) -> str:
        while True:
            syll = [self.rng.choice(list(_CONSONANTS)) + self.rng.choice(list(_VOWELS)) for _ in range(3)]
            word = "".join(syll) + self.rng.choice(list(_CONSONANTS))
            if word not in self.used:
                self.used.add(word)
                return word


def _informative(alias: str, partner: str, topic: str, rng: np.random.Generator) -> list[str]:
    kws = TOPICS[topic]
    return [t.format(x=alias, p=partner, kw=kws[rng.integers(len(kws))]) for t in CONTEXT_TEMPLATES]


def _distractors(text: str, rng: np.random.Generator) -> list[str]:
    out = []
    for f in FILLERS:
        out.append(f"{text} {f}" if rng.random() < 0.5 else f"{f} {text}")
    return out


def generate(n_pairs: int = 2000, seed: int = 0, test_fraction: float = 0.2,
             positive_rate: float = 0.5) -> SyntheticData:
    rng = np.random.default_rng(seed)
    alias = _AliasFactory(rng)
    topics = list(TOPICS)
    meta: list[SyntheticPair] = []
    corpus: list[str] = []
    for _ in range(n_pairs):
        ta = topics[rng.integers(len(topics))]
        label = int(rng.random() < positive_rate)
        tb = ta if label else [t for t in topics if t != ta][rng.integers(len(topics) - 1)]
        xa, xb = alias(), alias()
        tpl_a, tpl_b = rng.choice(len(SENTENCE_TEMPLATES), size=2, replace=False)
        sa = SyntheticSentence(xa, ta, SENTENCE_TEMPLATES[tpl_a].format(x=xa))
        sb = SyntheticSentence(xb, tb, SENTENCE_TEMPLATES[tpl_b].format(x=xb))
        pa, pb = (xb, xa) if label else (alias(), alias())
        corpus += _informative(xa, pa, ta, rng) + _informative(xb, pb, tb, rng)
        corpus += _distractors(sa.text, rng) + _distractors(sb.text, rng)
        meta.append(SyntheticPair(sa, sb, label))
    corpus = [corpus[i] for i in rng.permutation(len(corpus))]
    n_test = int(round(n_pairs * test_fraction))
    n_train = n_pairs - n_test

    def to_dataset(items: list[SyntheticPair], name: str) -> PairDataset:
        return PairDataset(tuple(SentencePair(i, p.a.text, p.b.text, p.label) for i, p in enumerate(items)), name)

    return SyntheticData(to_dataset(meta[:n_train], "synthetic-train"), to_dataset(meta[n_train:], "synthetic-test"),
                         corpus, meta[:n_train], meta[n_train:])


def topic_of_contexts(texts) -> str | None:
    """Majority topic named by keywords in ``texts``; None if no keyword appears."""
    votes: dict[str, int] = {}
    for text in texts:
        words = set(text.lower().split())
        for topic, kws in TOPICS.items():
            if words & set(kws):
                votes[topic] = votes.get(topic, 0) + 1
    if not votes:
        return None
    return min(votes, key=lambda t: (-votes[t], t))


def oracle_label(contexts_a, contexts_b) -> int | None:
    """Match label read off the contexts alone, or None if either side is uninformative."""
    ta, tb = topic_of_contexts(contexts_a), topic_of_contexts(contexts_b)
    if ta is None or tb is None:
        return None
    return int(ta == tb)


def experiment_config(paths: dict, output_dir: str, seed: int = 0):
    """Run configuration tuned for the synthetic context-utility experiment.

    A trained baseline cannot separate contexts on this data (aliases of test
    sentences are unseen), so pseudo-labels come from a seeded random
    embedding bag, whose cosine tracks token overlap. The thresholds sit
    between the overlap of an informative context with its partner sentence
    and that of a distractor. ``min_token_freq`` exceeds the largest alias
    frequency, so aliases map to UNK in training as they do at test time and
    the matcher cannot key on alias identity. A single fusion layer trains
    reliably here; deeper stacks often stall on the loss plateau near ln 2.
    """
    from .encoder import EncoderConfig
    from .matcher import FusionConfig, TrainConfig
    from .pipeline import Paths, RunConfig, ScorerConfig
    from .selector import SelectorConfig

    return RunConfig(
        paths=Paths(str(paths["train_pairs"]), str(paths["test_pairs"]), str(paths["corpus"]), output_dir),
        encoder=EncoderConfig(max_seq_len=24, pooling="mean"),
        fusion=FusionConfig(fusion_layers=1),
        selector=SelectorConfig(d_a=0.13, d_b=0.13, K=3),
        train=TrainConfig(learning_rate=1e-3, epochs=14, batch_size=16),
        selector_train=TrainConfig(learning_rate=1e-3, epochs=1, batch_size=32),
        scorer=ScorerConfig(kind="bag", dim=512),
        min_token_freq=20,
        seed=seed,
    )


@dataclass
class ContextUtilityResult:
    tables: dict  # mode -> {"final": EvalReport, "baseline": EvalReport, "context": EvalReport}
    seconds: dict  # mode (or "generate") -> wall-clock seconds
    ablation_table: str
    oracle_agreement: float  # share of test pairs whose selected contexts imply the gold label
    runs_dir: Path  # one output directory per mode underneath


def context_utility(work_dir, n_pairs: int = 2000, seed: int = 0,
                    modes=("none", "cs_random", "cs_topk", "rs_off"), force: bool = False) -> ContextUtilityResult:
    """Generate the synthetic dataset under ``work_dir`` and run each ablation mode on it."""
    from .pipeline import Pipeline, load_run, report_ablation

    work = Path(work_dir)
    t = time.perf_counter()
    data = generate(n_pairs, seed)
    paths = data.write(work / "data")
    seconds = {"generate": time.perf_counter() - t}
    base = experiment_config(paths, str(work / "runs"), seed)
    tables, runs = {}, []
    for n, mode in enumerate(modes):
        cfg = base.with_overrides({"ablation": mode, "paths.output_dir": str(work / "runs" / mode)})
        pipe = Pipeline(cfg, force)
        if n and not force:
            pipe.adopt(work / "runs" / modes[0])
        t = time.perf_counter()
        tables[mode] = pipe.evaluate()
        seconds[mode] = time.perf_counter() - t
        runs.append(load_run(pipe.out, mode))
    lead = Pipeline(base.with_overrides({"ablation": modes[0], "paths.output_dir": str(work / "runs" / modes[0])}))
    selected = lead.selected_contexts("test")
    hits = sum(oracle_label(selected.get((p.id, "a"), []), selected.get((p.id, "b"), [])) == p.label
               for p in data.test)
    table = report_ablation(runs) if "none" in modes and len(modes) > 1 else ""
    return ContextUtilityResult(tables, seconds, table, hits / len(data.test), work / "runs")
