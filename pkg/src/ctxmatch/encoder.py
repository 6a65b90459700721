"""Tokenization, vocabularies and the tiny transformer sentence encoder."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .nn import Embedding, LayerNorm, ParamStore, Tensor, TransformerBlock
from .nn.tensor import gather_rows, mul, tsum

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
RESERVED = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(len(RESERVED))


def tokenize(text: str, mode: str = "word") -> list[str]:
    """``word``: lowercased whitespace tokens. ``char``: every non-space character."""
    if mode == "word":
        return text.lower().split()
    if mode == "char":
        return [c for c in text if not c.isspace()]
    raise ValueError(f"unknown tokenizer mode {mode!r}")


class Vocabulary:
    def __init__(self, tokens: Sequence[str], mode: str = "word"):
        self.mode = mode
        self.itos = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def tokens(self, text: str) -> list[str]:
        return tokenize(text, self.mode)

    def save(self, path) -> None:
        """One token per line after the reserved block: id = line index + 5."""
        body = "".join(t + "\n" for t in self.itos[len(RESERVED):])
        Path(path).write_text(body, encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path, mode: str = "word") -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        return cls([t for t in lines if t], mode)


def build_vocabulary(texts: Iterable[str], mode: str = "word", min_freq: int = 1) -> Vocabulary:
    """Ids by descending frequency, ties in lexicographic order."""
    counts: Counter[str] = Counter()
    n = 0
    for text in texts:
        n += 1
        counts.update(tokenize(text, mode))
    if n == 0:
        raise ValueError("build_vocabulary: empty corpus")
    kept = [t for t, c in counts.items() if c >= min_freq and t not in RESERVED]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept, mode)


def encode_ids(vocab: Vocabulary, tokens: Sequence[str], max_seq_len: int) -> list[int]:
    """``[CLS] tokens [SEP]`` truncated so the result fits in ``max_seq_len``."""
    body = [vocab.id(t) for t in tokens][: max(max_seq_len - 2, 0)]
    return [CLS_ID] + body + [SEP_ID]


def encode_segments(vocab: Vocabulary, segments: Sequence[Sequence[str]], max_seq_len: int) -> list[int]:
    """``[CLS] s1 [SEP] s2 [SEP] ...``; the longest segment is trimmed first."""
    ids = [[vocab.id(t) for t in seg] for seg in segments]
    budget = max_seq_len - 1 - len(ids)
    while sum(map(len, ids)) > budget:
        longest = max(range(len(ids)), key=lambda i: (len(ids[i]), -i))
        ids[longest].pop()
    out = [CLS_ID]
    for seg in ids:
        out += seg + [SEP_ID]
    return out


def pad_batch(seqs: Sequence[Sequence[int]], width: int | None = None) -> np.ndarray:
    width = max(map(len, seqs)) if width is None else width
    out = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    ffn_dim: int = 128
    max_seq_len: int = 64
    share_context_params: bool = True
    pooling: str = "cls"

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError("model_dim must be divisible by heads")
        if self.max_seq_len < 2:
            raise ValueError("max_seq_len must be >= 2")
        if self.pooling not in ("cls", "mean"):
            raise ValueError(f"unknown pooling {self.pooling!r}")


class TransformerEncoder:
    """Token + learned position embeddings, pre-norm blocks, final layer norm."""

    def __init__(self, config: EncoderConfig, vocab_size: int, store: ParamStore, name: str,
                 rng: np.random.Generator):
        self.config = config
        self.name = name
        d = config.model_dim
        self.tok = Embedding(store, f"{name}.tok", vocab_size, d, rng)
        self.pos = Embedding(store, f"{name}.pos", config.max_seq_len, d, rng)
        self.blocks = [TransformerBlock(store, f"{name}.block{i}", d, config.heads, config.ffn_dim, rng)
                       for i in range(config.layers)]
        self.ln = LayerNorm(store, f"{name}.ln_final", d)

    def hidden(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2:
            raise ValueError(f"expected a (batch, length) id array, got shape {ids.shape}")
        if ids.shape[1] > self.config.max_seq_len:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_seq_len {self.config.max_seq_len}")
        mask = ids != PAD_ID
        if not mask.any(axis=1).all():
            raise ValueError("cannot encode an all-PAD sequence")
        x = self.tok(ids) + gather_rows(self.pos.table, np.arange(ids.shape[1]))
        for block in self.blocks:
            x = block(x, mask)
        return self.ln(x)

    def __call__(self, ids: np.ndarray) -> Tensor:
        """Pooled ``(batch, model_dim)`` representation."""
        h = self.hidden(ids)
        if self.config.pooling == "cls":
            return h[:, 0, :]
        mask = (np.asarray(ids) != PAD_ID).astype(np.float64)
        summed = tsum(mul(h, mask[:, :, None]), axis=1)
        return mul(summed, 1.0 / mask.sum(axis=1, keepdims=True))

    def attention_weights(self) -> list[np.ndarray]:
        return [b.attn.last_weights for b in self.blocks]


class SentenceEncoders:
    """Sentence encoder plus a context encoder that is either the same object or a clone."""

    def __init__(self, config: EncoderConfig, vocab_size: int, store: ParamStore, rng: np.random.Generator,
                 context_rng: np.random.Generator | None = None, prefix: str = ""):
        self.sentence = TransformerEncoder(config, vocab_size, store, f"{prefix}sent_enc", rng)
        if config.share_context_params:
            self.context = self.sentence
        else:
            self.context = TransformerEncoder(config, vocab_size, store, f"{prefix}ctx_enc",
                                              context_rng if context_rng is not None else rng)


def encode_sentence(model: TransformerEncoder, ids) -> np.ndarray:
    """Pooled vector(s) for one id sequence or a padded batch."""
    ids = np.asarray(ids, dtype=np.int64)
    single = ids.ndim == 1
    out = model(ids[None, :] if single else ids).data
    return out[0] if single else out


def encode_context(encoders: SentenceEncoders, ids) -> np.ndarray:
    return encode_sentence(encoders.context, ids)


__all__ = [
    "CLS_ID", "EncoderConfig", "MASK_ID", "PAD_ID", "SEP_ID", "SentenceEncoders", "TransformerEncoder",
    "UNK_ID", "Vocabulary", "build_vocabulary", "encode_context", "encode_ids", "encode_segments",
    "encode_sentence", "pad_batch", "tokenize",
]
