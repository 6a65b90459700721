"""Context selection: similarity scoring, threshold pseudo-labels, and the selector classifier."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Context, PairDataset, SentencePair, sentence_id
from .encoder import (
    EncoderConfig,
    TransformerEncoder,
    Vocabulary,
    encode_ids,
    encode_segments,
    pad_batch,
    tokenize,
)
from .matcher import TrainConfig, TrainHistory, fit
from .nn import Linear, ParamStore, Tensor, clip, sigmoid
from .nn.tensor import reshape

KEEP_THRESHOLD = 0.5


@dataclass(frozen=True)
class SelectorConfig:
    d_a: float = 0.7
    d_b: float = 0.3
    K: int = 3

    def __post_init__(self):
        if not 0 <= self.d_b <= self.d_a <= 1:
            raise ValueError(f"need 0 <= d_b <= d_a <= 1, got d_a={self.d_a}, d_b={self.d_b}")
        if self.K < 1:
            raise ValueError("K must be >= 1")


class BaselineScorer:
    """Cosine similarity between pooled texts, clamped into [0, 1].

    ``pooling="encoder"`` runs a trained transformer and uses its pooled
    output. ``pooling="bag"`` averages one seeded random vector per distinct
    token string, so its cosine measures lexical overlap and does not depend
    on which tokens made it into the model vocabulary.
    """

    def __init__(self, encoder: TransformerEncoder | None, vocab: Vocabulary | None, pooling: str = "encoder",
                 dim: int = 0, seed: int = 0, mode: str = "word"):
        if pooling not in ("encoder", "bag"):
            raise ValueError(f"unknown scorer pooling {pooling!r}")
        if pooling == "encoder" and (encoder is None or vocab is None):
            raise ValueError("encoder pooling needs an encoder and a vocabulary")
        self.encoder, self.vocab, self.pooling = encoder, vocab, pooling
        self.dim, self.seed, self.mode = dim, seed, mode
        self._bag: dict[str, np.ndarray] = {}

    @classmethod
    def random_bag(cls, dim: int, seed: int, mode: str = "word") -> "BaselineScorer":
        if dim < 1:
            raise ValueError("bag dimension must be positive")
        return cls(None, None, "bag", dim, seed, mode)

    def _token_vector(self, token: str) -> np.ndarray:
        v = self._bag.get(token)
        if v is None:
            key = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
            v = np.random.default_rng([self.seed, 404, key]).standard_normal(self.dim)
            self._bag[token] = v
        return v

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        for t in texts:
            if not t.strip():
                raise ValueError("cannot score an empty text")
        if self.pooling == "bag":
            out = np.zeros((len(texts), self.dim))
            for i, t in enumerate(texts):
                out[i] = np.mean([self._token_vector(tok) for tok in tokenize(t, self.mode)], axis=0)
            return out
        max_len = self.encoder.config.max_seq_len
        seqs = [encode_ids(self.vocab, self.vocab.tokens(t), max_len) for t in texts]
        return np.concatenate([self.encoder(pad_batch(seqs[i:i + 256])).data
                               for i in range(0, len(seqs), 256)])

    def similarities(self, sentences: Sequence[str], contexts: Sequence[str]) -> np.ndarray:
        if len(sentences) != len(contexts):
            raise ValueError("sentences and contexts must align")
        if not len(sentences):
            return np.zeros(0)
        return cosine_unit(self.embed(sentences), self.embed(contexts))

    def similarity(self, sentence: str, context: str) -> float:
        return float(self.similarities([sentence], [context])[0])


def cosine_unit(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Row-wise cosine clamped to [0, 1]; zero vectors score 0."""
    nu = np.linalg.norm(u, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    dot = (u * v).sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where((nu > 0) & (nv > 0), dot / (nu * nv), 0.0)
    return np.clip(cos, 0.0, 1.0)


baseline_similarity = BaselineScorer.similarity


@dataclass(frozen=True)
class PseudoLabel:
    pair_id: int
    side: str  # side the context belongs to; it is scored against the other sentence
    context: Context
    text_a: str
    text_b: str
    d: float
    use: int

    @property
    def context_hash(self) -> str:
        return context_hash(self.context.text)


def context_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def pseudo_label_rule(label: int, d: float, config: SelectorConfig) -> int:
    """Positives keep contexts with d > d_a; negatives keep contexts with d <= d_b."""
    return int(d > config.d_a) if label == 1 else int(d <= config.d_b)


def make_pseudo_labels(dataset: PairDataset, contexts: Mapping[str, Sequence[Context]],
                       scorer: BaselineScorer, config: SelectorConfig) -> list[PseudoLabel]:
    jobs: list[tuple[SentencePair, str, Context, str]] = []
    for pair in dataset:
        if pair.label is None:
            raise ValueError(f"pair {pair.id} has no label; pseudo-labels need gold labels")
        for side, other in (("a", pair.text_b), ("b", pair.text_a)):
            for ctx in contexts.get(sentence_id(pair.id, side), ()):
                jobs.append((pair, side, ctx, other))
    d = scorer.similarities([j[3] for j in jobs], [j[2].text for j in jobs])
    return [PseudoLabel(p.id, side, ctx, p.text_a, p.text_b, float(di), pseudo_label_rule(p.label, di, config))
            for (p, side, ctx, _), di in zip(jobs, d)]


def write_pseudo_labels(path, records: Iterable[PseudoLabel]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(f"{r.pair_id}\t{r.side}\t{r.context_hash}\t{r.d!r}\t{r.use}\n")


def read_pseudo_labels(path, dataset: PairDataset, contexts: Mapping[str, Sequence[Context]]) -> list[PseudoLabel]:
    """Rebuild full records from a dump by joining on pair id and context hash."""
    pairs = {p.id: p for p in dataset}
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            pid, side, h, d, use = line.rstrip("\n").split("\t")
            pair = pairs[int(pid)]
            match = [c for c in contexts.get(sentence_id(pair.id, side), ()) if context_hash(c.text) == h]
            if not match:
                raise ValueError(f"{path}:{lineno}: context {h} not found for pair {pid}{side}")
            out.append(PseudoLabel(pair.id, side, match[0], pair.text_a, pair.text_b, float(d), int(use)))
    return out


class SelectorModel:
    """Tiny encoder over ``[CLS] S_a [SEP] S_b [SEP] c [SEP]`` with a sigmoid head on CLS."""

    def __init__(self, vocab: Vocabulary, config: EncoderConfig, seed: int):
        self.vocab, self.config = vocab, config
        self.params = ParamStore()
        rng = np.random.default_rng([seed, 505])
        self.encoder = TransformerEncoder(config, len(vocab), self.params, "sel_enc", rng)
        self.head = Linear(self.params, "sel_head", config.model_dim, 1, rng)

    def triple_ids(self, text_a: str, text_b: str, context: str) -> tuple[int, ...]:
        segs = [self.vocab.tokens(t) for t in (text_a, text_b, context)]
        return tuple(encode_segments(self.vocab, segs, self.config.max_seq_len))

    def forward(self, batch: Sequence[Sequence[int]]) -> Tensor:
        z = self.head(self.encoder(pad_batch(batch)))
        return clip(sigmoid(reshape(z, (-1,))), 1e-12, 1.0 - 1e-12)

    def keep_probabilities(self, triples: Sequence[tuple[str, str, str]], batch_size: int = 128) -> np.ndarray:
        ids = [self.triple_ids(*t) for t in triples]
        out = [self.forward(ids[i:i + batch_size]).data for i in range(0, len(ids), batch_size)]
        return np.concatenate(out) if out else np.zeros(0)


def train_selector(pseudo_labels: Sequence[PseudoLabel], vocab: Vocabulary, config: EncoderConfig,
                   train: TrainConfig, seed: int, epochs: int | None = None) -> tuple[SelectorModel, TrainHistory]:
    if not pseudo_labels:
        raise ValueError("train_selector: no pseudo-labels")
    labels = np.array([r.use for r in pseudo_labels], dtype=np.float64)
    n_pos = int(labels.sum())
    if n_pos in (0, len(labels)):
        raise ValueError(f"train_selector: pseudo-labels are single-class "
                         f"({n_pos} use=1, {len(labels) - n_pos} use=0); adjust d_a/d_b")
    if epochs is not None:
        train = TrainConfig(train.learning_rate, epochs, train.batch_size)
    model = SelectorModel(vocab, config, seed)
    triples = [model.triple_ids(r.text_a, r.text_b, r.context.text) for r in pseudo_labels]
    hist = fit(model.forward, model.params, triples, labels, train, seed, "selector")
    probs = np.concatenate([model.forward(triples[i:i + 128]).data for i in range(0, len(triples), 128)])
    hist.train_accuracy = float(((probs >= 0.5) == (labels == 1)).mean())
    return model, hist


@dataclass(frozen=True)
class SelectorVerdict:
    pair_id: int
    side: str
    context: Context
    keep_probability: float

    @property
    def kept(self) -> bool:
        return self.keep_probability >= KEEP_THRESHOLD


SELECTION_MODES = ("model", "random", "topk")


def random_choice(n: int, k: int, seed: int, pair_id: int, side: str) -> list[int]:
    """Seeded uniform draw of ``min(k, n)`` candidate positions, returned ascending."""
    rng = np.random.default_rng([seed, pair_id, 0 if side == "a" else 1])
    return sorted(rng.choice(n, size=min(k, n), replace=False).tolist())


def _top_by_probability(verdicts: Sequence[SelectorVerdict], k: int) -> tuple[Context, ...]:
    kept = [v for v in verdicts if v.kept]
    kept.sort(key=lambda v: (-v.keep_probability, v.context.text))
    return tuple(v.context for v in kept[:k])


def select_contexts(model: SelectorModel | None, pair: SentencePair, candidates_a: Sequence[Context],
                    candidates_b: Sequence[Context], config: SelectorConfig, mode: str = "model",
                    seed: int = 0) -> tuple[tuple[Context, ...], tuple[Context, ...], list[SelectorVerdict]]:
    """Filtered context sets for both sides of one pair, plus per-candidate verdicts.

    ``random`` and ``topk`` bypass the model: the first draws K candidates
    uniformly with a seeded generator, the second keeps the K best retrieval
    scores (candidates are expected in store order).
    """
    out = select_many(model, [(pair, candidates_a, candidates_b)], config, mode, seed)
    return out[0]


def select_many(model: SelectorModel | None, items: Sequence[tuple[SentencePair, Sequence[Context], Sequence[Context]]],
                config: SelectorConfig, mode: str = "model", seed: int = 0):
    if mode not in SELECTION_MODES:
        raise ValueError(f"unknown selection mode {mode!r}")
    k = config.K
    if mode == "topk":
        return [(tuple(a[:k]), tuple(b[:k]), []) for _, a, b in items]
    if mode == "random":
        return [(tuple(a[i] for i in random_choice(len(a), k, seed, p.id, "a")),
                 tuple(b[i] for i in random_choice(len(b), k, seed, p.id, "b")), []) for p, a, b in items]
    if model is None:
        raise ValueError("model-based selection needs a trained selector")
    triples, owners = [], []
    for n, (p, a, b) in enumerate(items):
        for side, cands in (("a", a), ("b", b)):
            for c in cands:
                triples.append((p.text_a, p.text_b, c.text))
                owners.append((n, side, c))
    probs = model.keep_probabilities(triples)
    per_item: list[dict[str, list[SelectorVerdict]]] = [{"a": [], "b": []} for _ in items]
    for (n, side, c), pr in zip(owners, probs):
        per_item[n][side].append(SelectorVerdict(items[n][0].id, side, c, float(pr)))
    return [(_top_by_probability(v["a"], k), _top_by_probability(v["b"], k), v["a"] + v["b"]) for v in per_item]
