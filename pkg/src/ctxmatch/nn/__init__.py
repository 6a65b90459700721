from .layers import (
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    MultiHeadSelfAttention,
    ParamStore,
    TransformerBlock,
)
from .optim import AdamState, adam_step
from .tensor import (
    Tensor,
    backward,
    bce_loss,
    clip,
    concat,
    gather_rows,
    layer_norm,
    log,
    matmul,
    relu,
    sigmoid,
    softmax_rows,
    tabs,
)

__all__ = [
    "AdamState", "Embedding", "FeedForward", "LayerNorm", "Linear", "MultiHeadSelfAttention",
    "ParamStore", "Tensor", "TransformerBlock", "adam_step", "backward", "bce_loss", "clip",
    "concat", "gather_rows", "layer_norm", "log", "matmul", "relu", "sigmoid", "softmax_rows",
    "tabs",
]
