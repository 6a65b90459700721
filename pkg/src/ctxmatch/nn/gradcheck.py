from __future__ import annotations

from typing import Callable

import numpy as np

from .layers import ParamStore
from .tensor import Tensor


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(loss_fn: Callable[[], Tensor], param: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central differences of ``loss_fn()`` wrt every entry of ``param``."""
    out = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = loss_fn().item()
        flat[i] = old - h
        down = loss_fn().item()
        flat[i] = old
        out.reshape(-1)[i] = (up - down) / (2 * h)
    return out


def check_gradients(loss_fn: Callable[[], Tensor], params: ParamStore, h: float = 1e-4,
                    zero_atol: float = 1e-8) -> dict[str, float]:
    """Per-parameter relative error between backprop and central differences.

    A parameter whose analytic and numeric gradients are both within
    ``zero_atol`` of zero everywhere scores 0: the ratio is pure round-off
    there. Attention key biases are the usual case, since softmax is
    invariant to a shift shared by every key.
    """
    params.zero_grad()
    loss_fn().backward()
    analytic = {k: v.copy() for k, v in params.grads.items()}
    out = {}
    for name, p in params.items():
        num = numeric_grad(loss_fn, p, h)
        if np.abs(analytic[name]).max(initial=0) <= zero_atol and np.abs(num).max(initial=0) <= zero_atol:
            out[name] = 0.0
        else:
            out[name] = relative_error(analytic[name], num)
    return out
