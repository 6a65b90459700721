"""Parameter store and the small layer set used by the encoders and matcher."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .tensor import (
    Tensor,
    gather_rows,
    layer_norm,
    matmul,
    relu,
    reshape,
    softmax_rows,
    transpose,
)


class ParamStore:
    """Ordered name -> parameter map. Gradients live on ``Tensor.grad``."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def create(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return {k: v.grad for k, v in self._params.items()}

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def count(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self._params.items())

    def load_state(self, state) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in state.items():
            if self._params[k].shape != np.shape(v):
                raise ValueError(f"shape mismatch for {k}: {self._params[k].shape} vs {np.shape(v)}")
            self._params[k].data = np.array(v, dtype=np.float64)


def _normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return rng.standard_normal(shape) * std


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, rng: np.random.Generator):
        self.w = store.create(f"{name}.w", _normal(rng, (d_in, d_out), 1.0 / np.sqrt(d_in)))
        self.b = store.create(f"{name}.b", np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.w) + self.b


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int):
        self.gain = store.create(f"{name}.gain", np.ones(dim))
        self.bias = store.create(f"{name}.bias", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


class Embedding:
    def __init__(self, store: ParamStore, name: str, rows: int, dim: int, rng: np.random.Generator,
                 std: float = 1.0):
        self.table = store.create(f"{name}.table", _normal(rng, (rows, dim), std))

    def __call__(self, ids) -> Tensor:
        return gather_rows(self.table, ids)


class MultiHeadSelfAttention:
    """Scaled dot-product self-attention over ``(batch, length, dim)`` inputs.

    ``mask`` is ``(batch, length)`` with True at real positions; masked keys
    receive exactly zero weight.
    """

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"model_dim {dim} not divisible by heads {heads}")
        self.dim, self.heads = dim, heads
        self.q = Linear(store, f"{name}.q", dim, dim, rng)
        self.k = Linear(store, f"{name}.k", dim, dim, rng)
        self.v = Linear(store, f"{name}.v", dim, dim, rng)
        self.o = Linear(store, f"{name}.o", dim, dim, rng)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor, b: int, n: int) -> Tensor:
        return transpose(reshape(x, (b, n, self.heads, self.dim // self.heads)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        b, n, _ = x.shape
        q, k, v = (self._split(f(x), b, n) for f in (self.q, self.k, self.v))
        scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(self.dim // self.heads))
        weights = softmax_rows(scores, mask[:, None, None, :])
        self.last_weights = weights.data
        ctx = transpose(matmul(weights, v), (0, 2, 1, 3))
        return self.o(reshape(ctx, (b, n, self.dim)))


class FeedForward:
    def __init__(self, store: ParamStore, name: str, dim: int, hidden: int, rng: np.random.Generator):
        self.up = Linear(store, f"{name}.up", dim, hidden, rng)
        self.down = Linear(store, f"{name}.down", hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(relu(self.up(x)))


class TransformerBlock:
    """Pre-norm block: ``x + attn(ln(x))`` then ``x + ffn(ln(x))``."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, ffn_dim: int,
                 rng: np.random.Generator):
        self.ln1 = LayerNorm(store, f"{name}.ln1", dim)
        self.attn = MultiHeadSelfAttention(store, f"{name}.attn", dim, heads, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", dim)
        self.ffn = FeedForward(store, f"{name}.ffn", dim, ffn_dim, rng)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        x = x + self.attn(self.ln1(x), mask)
        return x + self.ffn(self.ln2(x))
