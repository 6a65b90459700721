"""Context-enhanced matcher: slot fusion transformer, feature map, FFN head, training."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoder import EncoderConfig, SentenceEncoders, pad_batch
from .nn import (
    AdamState,
    Embedding,
    LayerNorm,
    Linear,
    ParamStore,
    Tensor,
    TransformerBlock,
    adam_step,
    bce_loss,
    clip,
    concat,
    gather_rows,
    relu,
    sigmoid,
    tabs,
)
from .nn.tensor import as_tensor, reshape

log = logging.getLogger(__name__)

SENT_A, SENT_B, CTX_A, CTX_B = range(4)
P_MIN = 1e-12


@dataclass(frozen=True)
class FusionConfig:
    fusion_layers: int = 3
    head_hidden: int | None = None  # defaults to model_dim

    def __post_init__(self):
        if self.fusion_layers < 1:
            raise ValueError("fusion_layers must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    epochs: int = 3
    batch_size: int = 16

    def __post_init__(self):
        if not self.learning_rate > 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError(f"invalid training config {self}")


def slot_layout(k: int) -> np.ndarray:
    """Slot types for ``[h_a, h_b, ctx_a x k, ctx_b x k]``."""
    return np.array([SENT_A, SENT_B] + [CTX_A] * k + [CTX_B] * k, dtype=np.int64)


class FusionTransformer:
    def __init__(self, config: FusionConfig, enc: EncoderConfig, context_size: int, store: ParamStore,
                 rng: np.random.Generator, name: str = "fusion"):
        self.config = config
        self.context_size = context_size
        self.dim = enc.model_dim
        self.slot_type = Embedding(store, f"{name}.slot_type", 4, enc.model_dim, rng)
        self.blocks = [TransformerBlock(store, f"{name}.block{i}", enc.model_dim, enc.heads, enc.ffn_dim, rng)
                       for i in range(config.fusion_layers)]
        self.ln = LayerNorm(store, f"{name}.ln_final", enc.model_dim)

    @property
    def max_slots(self) -> int:
        return 2 + 2 * self.context_size

    def __call__(self, slots: Tensor, types: np.ndarray, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """Self-attention over ``(batch, slots, dim)``; returns the outputs at slots 0 and 1."""
        if slots.shape[1] > self.max_slots:
            raise ValueError(f"{slots.shape[1]} slots exceed the maximum of {self.max_slots}")
        if slots.shape[-1] != self.dim:
            raise ValueError(f"slot dim {slots.shape[-1]} != model_dim {self.dim}")
        x = slots + self.slot_type(types)
        for block in self.blocks:
            x = block(x, mask)
        x = self.ln(x)
        return x[:, 0, :], x[:, 1, :]


def fuse(h_a, h_b, ctx_a: Sequence, ctx_b: Sequence, fusion: FusionTransformer) -> tuple[np.ndarray, np.ndarray]:
    """Fuse one example's pooled vectors; absent context slots are masked out."""
    k = fusion.context_size
    vecs = [np.asarray(v, dtype=np.float64) for v in (h_a, h_b, *ctx_a, *ctx_b)]
    for v in vecs:
        if v.shape != (fusion.dim,):
            raise ValueError(f"expected vectors of shape ({fusion.dim},), got {v.shape}")
    if len(ctx_a) > k or len(ctx_b) > k:
        raise ValueError(f"at most {k} contexts per side")
    slots = np.zeros((1, 2 + 2 * k, fusion.dim))
    mask = np.zeros((1, 2 + 2 * k), dtype=bool)
    slots[0, 0], slots[0, 1] = vecs[0], vecs[1]
    mask[0, :2] = True
    for j, v in enumerate(ctx_a):
        slots[0, 2 + j] = v
        mask[0, 2 + j] = True
    for j, v in enumerate(ctx_b):
        slots[0, 2 + k + j] = v
        mask[0, 2 + k + j] = True
    a, b = fusion(Tensor(slots), slot_layout(k)[None, :], mask)
    return a.data[0], b.data[0]


def match_features(h_a, h_b) -> Tensor:
    """``[h_a; h_b; |h_a - h_b|]`` along the last axis."""
    h_a, h_b = as_tensor(h_a), as_tensor(h_b)
    if h_a.shape != h_b.shape:
        raise ValueError(f"feature length mismatch: {h_a.shape} vs {h_b.shape}")
    return concat([h_a, h_b, tabs(h_a - h_b)], axis=-1)


class MatchHead:
    """Two relu hidden layers and a sigmoid output unit."""

    def __init__(self, store: ParamStore, in_dim: int, hidden: int, rng: np.random.Generator, name: str = "head"):
        self.l1 = Linear(store, f"{name}.l1", in_dim, hidden, rng)
        self.l2 = Linear(store, f"{name}.l2", hidden, hidden, rng)
        self.out = Linear(store, f"{name}.out", hidden, 1, rng)

    def layers(self) -> list[Linear]:
        return [self.l1, self.l2, self.out]

    def logits(self, features: Tensor) -> Tensor:
        return self.out(relu(self.l2(relu(self.l1(features)))))


def predict(features, head: MatchHead) -> Tensor:
    """Match probability, clamped into ``[1e-12, 1 - 1e-12]``."""
    features = as_tensor(features)
    single = features.ndim == 1
    z = head.logits(reshape(features, (1, -1)) if single else features)
    p = clip(sigmoid(reshape(z, (-1,))), P_MIN, 1.0 - P_MIN)
    return reshape(p, ()) if single else p


@dataclass(frozen=True)
class MatchExample:
    pair_id: int
    ids_a: tuple[int, ...]
    ids_b: tuple[int, ...]
    ctx_a: tuple[tuple[int, ...], ...] = ()
    ctx_b: tuple[tuple[int, ...], ...] = ()
    label: int | None = None


class ContextMatcher:
    """Sentence/context encoders, fusion stack and head under one parameter store.

    With ``use_contexts=False`` every context slot is masked, which is the
    no-context baseline running through the same code path.
    """

    def __init__(self, enc: EncoderConfig, fusion: FusionConfig, vocab_size: int, context_size: int,
                 seed: int, use_contexts: bool = True, context_seed: int | None = None):
        self.enc_config, self.fusion_config = enc, fusion
        self.context_size = context_size
        self.use_contexts = use_contexts
        self.params = ParamStore()
        rng = np.random.default_rng([seed, 101])
        ctx_rng = np.random.default_rng([seed if context_seed is None else context_seed, 202])
        self.encoders = SentenceEncoders(enc, vocab_size, self.params, rng, ctx_rng)
        self.fusion = FusionTransformer(fusion, enc, context_size, self.params, rng)
        self.head = MatchHead(self.params, 3 * enc.model_dim, fusion.head_hidden or enc.model_dim, rng)

    def forward(self, batch: Sequence[MatchExample]) -> Tensor:
        b, k = len(batch), self.context_size
        sent = self.encoders.sentence(pad_batch([ex.ids_a for ex in batch] + [ex.ids_b for ex in batch]))
        rows = [sent]
        width = 2 + 2 * k
        index = np.empty((b, width), dtype=np.int64)
        mask = np.zeros((b, width), dtype=bool)
        index[:, 0], index[:, 1] = np.arange(b), b + np.arange(b)
        mask[:, :2] = True
        ctx_seqs: list[tuple[int, ...]] = []
        slot_pos: list[tuple[int, int]] = []
        if self.use_contexts:
            for i, ex in enumerate(batch):
                for j, c in enumerate(ex.ctx_a[:k]):
                    slot_pos.append((i, 2 + j))
                    ctx_seqs.append(c)
                for j, c in enumerate(ex.ctx_b[:k]):
                    slot_pos.append((i, 2 + k + j))
                    ctx_seqs.append(c)
        n_ctx = len(ctx_seqs)
        if n_ctx:
            rows.append(self.encoders.context(pad_batch(ctx_seqs)))
        rows.append(Tensor(np.zeros((1, self.enc_config.model_dim))))
        index[:, 2:] = 2 * b + n_ctx  # absent slots point at the zero row
        for c, (i, s) in enumerate(slot_pos):
            index[i, s] = 2 * b + c
            mask[i, s] = True
        slots = gather_rows(concat(rows, axis=0), index)
        types = np.broadcast_to(slot_layout(k), (b, width))
        h_a, h_b = self.fusion(slots, types, mask)
        return predict(match_features(h_a, h_b), self.head)

    def predict_proba(self, examples: Sequence[MatchExample], batch_size: int = 64) -> np.ndarray:
        out = [self.forward(examples[i:i + batch_size]).data for i in range(0, len(examples), batch_size)]
        return np.concatenate(out) if out else np.zeros(0)


@dataclass
class TrainHistory:
    epoch_losses: list[float] = field(default_factory=list)
    train_accuracy: float | None = None


def fit(forward, params: ParamStore, examples: Sequence, labels: np.ndarray, config: TrainConfig, seed: int,
        name: str = "model") -> TrainHistory:
    """Mini-batch Adam on mean BCE; shuffling is driven by ``seed`` alone."""
    if not len(examples):
        raise ValueError(f"{name}: cannot train on an empty dataset")
    labels = np.asarray(labels, dtype=np.float64)
    rng = np.random.default_rng([seed, 303])
    opt = AdamState(learning_rate=config.learning_rate)
    hist = TrainHistory()
    for epoch in range(config.epochs):
        order = rng.permutation(len(examples))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            params.zero_grad()
            loss = bce_loss(forward([examples[i] for i in idx]), labels[idx])
            loss.backward()
            adam_step(params, opt)
            total += loss.item() * len(idx)
        hist.epoch_losses.append(total / len(order))
        log.info("%s epoch %d/%d loss %.5f", name, epoch + 1, config.epochs, hist.epoch_losses[-1])
    return hist


def train_matcher(model: ContextMatcher, examples: Sequence[MatchExample], config: TrainConfig,
                  seed: int) -> TrainHistory:
    labels = np.array([ex.label for ex in examples], dtype=np.float64)
    if len(examples) and np.isnan(labels).any():
        raise ValueError("train_matcher: every example needs a label")
    name = "matcher" if model.use_contexts else "baseline"
    hist = fit(model.forward, model.params, examples, labels, config, seed, name)
    probs = model.predict_proba(examples)
    hist.train_accuracy = float(((probs >= 0.5) == (labels == 1)).mean())
    return hist
