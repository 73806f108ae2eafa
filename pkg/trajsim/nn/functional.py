"""Composite layers built from the primitive tensor ops."""

from typing import List, NamedTuple, Tuple

import numpy as np

from trajsim.errors import ShapeError
from trajsim.nn import tensor as T
from trajsim.nn.tensor import Tensor


class LstmWeights(NamedTuple):
    """Single-layer LSTM weights; gate blocks are ordered input, forget, cell, output."""

    w_ih: Tensor  # d_in x 4d
    w_hh: Tensor  # d x 4d
    bias: Tensor  # 4d


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return T.matmul(x, weight) + bias


def feed_forward(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """d -> d_hid -> d with GELU in between."""
    return linear(T.gelu(linear(x, w1, b1)), w2, b2)


def _gates(pre: Tensor, h: Tensor, c: Tensor, w_hh: Tensor) -> Tuple[Tensor, Tensor]:
    d = h.shape[-1]
    gates = pre + T.matmul(h, w_hh)
    i = T.sigmoid(gates[:, 0:d])
    f = T.sigmoid(gates[:, d:2 * d])
    g = T.tanh(gates[:, 2 * d:3 * d])
    o = T.sigmoid(gates[:, 3 * d:4 * d])
    c_next = f * c + i * g
    return o * T.tanh(c_next), c_next


def _as_row(x: Tensor, name: str) -> Tensor:
    x = T.as_tensor(x)
    if x.ndim == 1:
        return T.reshape(x, (1, x.shape[0]))
    if x.ndim == 2 and x.shape[0] == 1:
        return x
    raise ShapeError(f"lstm_step: {name} must be a vector or a 1-row matrix, got shape {x.shape}")


def lstm_step(x_t: Tensor, state: Tuple[Tensor, Tensor], weights: LstmWeights) -> Tuple[Tensor, Tensor]:
    """One LSTM cell update; returns the new ``(h, c)`` as 1 x d rows."""
    h, c = (_as_row(s, name) for s, name in zip(state, ("h", "c")))
    x_t = _as_row(x_t, "x_t")
    if weights.w_hh.shape[1] != 4 * h.shape[1] or c.shape != h.shape:
        raise ShapeError(
            f"lstm_step: state shapes {h.shape}, {c.shape} do not match w_hh {weights.w_hh.shape}"
        )
    return _gates(T.matmul(x_t, weights.w_ih) + weights.bias, h, c, weights.w_hh)


def lstm_sequence(x: Tensor, weights: LstmWeights) -> Tensor:
    """Run the cell over the rows of ``x`` from a zero state; returns all n hidden states."""
    d = weights.w_hh.shape[0]
    pre = T.matmul(x, weights.w_ih) + weights.bias
    h = c = Tensor(np.zeros((1, d)))
    hidden: List[Tensor] = []
    for t in range(x.shape[0]):
        h, c = _gates(pre[t:t + 1], h, c, weights.w_hh)
        hidden.append(h)
    return T.concat_rows(*hidden)
