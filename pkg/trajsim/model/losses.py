"""Fine-tuning objectives: similarity MSE, ListNet and rank-decay ListNet."""

from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from trajsim.errors import ConfigError, DataError, ShapeError
from trajsim.nn import tensor as T
from trajsim.nn.tensor import Tensor

Scalar = Union[Tensor, float]

# keeps sqrt differentiable at zero distance
_DIST_FLOOR = 1e-12


def similarity_from_distance(values: np.ndarray, tau: float) -> np.ndarray:
    """exp(-d / tau), so identical trajectories score 1."""
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    return np.exp(-np.asarray(values, dtype=np.float64) / tau)


def mean_off_diagonal(values: np.ndarray) -> float:
    """Mean of the i != j entries of a square matrix."""
    n = values.shape[0]
    if n < 2:
        raise DataError("Need at least two trajectories to compute a mean pairwise distance")
    return float((values.sum() - np.trace(values)) / (n * (n - 1)))


@dataclass(frozen=True, eq=False)
class ScoredList:
    """Predicted scores ``s`` and target relevance ``r`` for one query's candidates."""

    s: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        s, r = np.asarray(self.s, dtype=np.float64), np.asarray(self.r, dtype=np.float64)
        if s.shape != r.shape or s.ndim != 1:
            raise ShapeError(f"Scored list needs equal-length vectors, got {s.shape} and {r.shape}")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(r))):
            raise DataError("Scored list entries must be finite")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "r", r)

    def __len__(self) -> int:
        return len(self.s)


@dataclass(frozen=True)
class LossWeights:
    gamma1: float = 0.1
    gamma2: float = 0.001

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ConfigError(f"Loss weights must be non-negative, got {self.gamma1}, {self.gamma2}")


class FinetuneLoss(NamedTuple):
    total: Tensor
    mse: Tensor
    listnet: Tensor
    rd_listnet: Tensor


def _as_rows(s, r):
    s = T.as_tensor(s)
    r = np.asarray(r, dtype=np.float64)
    if s.ndim == 1:
        s = T.reshape(s, (1, s.shape[0]))
        r = r.reshape(1, -1)
    if s.shape != r.shape:
        raise ShapeError(f"Scores {s.shape} and relevance {r.shape} differ in shape")
    if s.shape[-1] < 2:
        raise ShapeError(f"List losses need at least 2 candidates per list, got {s.shape[-1]}")
    return s, r


def _softmax(r: np.ndarray) -> np.ndarray:
    z = np.exp(r - r.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def rank_decay_weights(r: np.ndarray) -> np.ndarray:
    """1 / log2(position + 1) by descending ``r``; equal scores keep index order."""
    r = np.atleast_2d(np.asarray(r, dtype=np.float64))
    order = np.argsort(-r, axis=-1, kind="stable")
    weights = np.empty_like(r)
    decay = 1.0 / np.log2(np.arange(2, r.shape[-1] + 2, dtype=np.float64))
    np.put_along_axis(weights, order, np.broadcast_to(decay, r.shape), axis=-1)
    return weights


def _weighted_cross_entropy(s, r, weights) -> Tensor:
    s, r = _as_rows(s, r)
    p_r = _softmax(r)
    coeff = p_r if weights is None else p_r * weights.reshape(p_r.shape)
    per_list = T.sum(T.log_softmax_rows(s) * (-coeff), axis=-1)
    return T.mean(per_list)


def listnet_loss(s, r) -> Tensor:
    """Cross-entropy between top-one probabilities softmax(r) and softmax(s), averaged over lists."""
    return _weighted_cross_entropy(s, r, None)


def rd_listnet_loss(s, r, unit_weights: bool = False) -> Tensor:
    """ListNet with each candidate's term scaled by its rank-decay weight under ``r``."""
    _, rows = _as_rows(s, r)
    weights = np.ones_like(rows) if unit_weights else rank_decay_weights(rows)
    return _weighted_cross_entropy(s, r, weights)


def mse_loss(pred, target, off_diagonal: bool = True) -> Tensor:
    """Mean squared error, over the i != j entries of square inputs by default."""
    pred = T.as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} and target {target.shape} differ")
    if off_diagonal:
        if pred.ndim != 2 or pred.shape[0] != pred.shape[1]:
            raise ShapeError(f"mse_loss over pairs needs a square matrix, got {pred.shape}")
        index = off_diagonal_index(pred.shape[0])
        return T.squared_error(pred[index], target[index])
    return T.squared_error(pred, target)


def total_loss(mse: Scalar, ln: Scalar, rdln: Scalar, weights: LossWeights) -> Scalar:
    return mse + weights.gamma1 * ln + weights.gamma2 * rdln


def off_diagonal_index(n: int):
    """Fancy index selecting the (n, n - 1) off-diagonal block of an n x n matrix."""
    rows = np.repeat(np.arange(n), n - 1).reshape(n, n - 1)
    cols = np.array([[j for j in range(n) if j != i] for i in range(n)], dtype=np.int64).reshape(n, n - 1)
    return rows, cols


def predicted_similarity(embeddings: Tensor) -> Tensor:
    """exp(-||h_i - h_j||) for every pair of rows of a (B, d) embedding tensor."""
    b, d = embeddings.shape
    diff = T.reshape(embeddings, (b, 1, d)) - T.reshape(embeddings, (1, b, d))
    dist = T.sqrt(T.sum(diff * diff, axis=-1) + _DIST_FLOOR)
    return T.exp(-dist)


def batch_loss(embeddings: Tensor, target: np.ndarray, weights: LossWeights) -> FinetuneLoss:
    """Every batch member is a query whose list is the other B - 1 members."""
    b = embeddings.shape[0]
    if target.shape != (b, b):
        raise ShapeError(f"Target similarities {target.shape} do not match batch size {b}")
    if b < 2:
        raise ShapeError("A fine-tuning batch needs at least 2 trajectories")
    pred = predicted_similarity(embeddings)
    index = off_diagonal_index(b)
    s, r = pred[index], target[index]
    mse = T.squared_error(s, r)
    ln = listnet_loss(s, r)
    rdln = rd_listnet_loss(s, r)
    return FinetuneLoss(total_loss(mse, ln, rdln, weights), mse, ln, rdln)
