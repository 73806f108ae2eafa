"""Semantic alignment encoder.

Two feature channels (normalized GPS and grid) go through a shared
pre-encoder, then ``layers`` dual attention blocks in which each branch
queries the other branch's previous-layer output. The branch outputs are
blended with weight ``epsilon`` and mean-pooled into one embedding.
"""

import logging
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from trajsim.errors import ConfigError, ShapeError
from trajsim.model.features import TrajectoryFeatures
from trajsim.nn import functional as F
from trajsim.nn import tensor as T
from trajsim.nn.params import ParamStore
from trajsim.nn.tensor import Tensor

logger = logging.getLogger(__name__)

PRE_ENCODERS = ("linear", "lstm")
ATTENTION_KINDS = ("semantic", "vanilla")
FUSION_MODES = ("both", "gps", "grid")
BRANCHES = ("gps", "grid")
FEATURE_CHANNELS = 2


@dataclass(frozen=True)
class SamConfig:
    """Encoder hyperparameters; ``d_hid`` defaults to ``4 * d``."""

    d: int = 64
    d_hid: Optional[int] = None
    layers: int = 1
    heads: int = 16
    epsilon: float = 0.5
    pre_encoder: str = "linear"
    attention: str = "semantic"
    fusion: str = "both"

    def __post_init__(self):
        if self.d_hid is None:
            object.__setattr__(self, "d_hid", 4 * self.d)

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    def validate(self) -> "SamConfig":
        if self.d < 1 or self.d_hid < 1:
            raise ConfigError(f"model.d and model.d_hid must be positive, got {self.d}, {self.d_hid}")
        if self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"model.d ({self.d}) must be divisible by model.heads ({self.heads})")
        if self.layers < 1:
            raise ConfigError(f"model.layers must be >= 1, got {self.layers}")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError(f"model.epsilon must lie in (0, 1), got {self.epsilon}")
        for key, value, allowed in (
            ("model.pre_encoder", self.pre_encoder, PRE_ENCODERS),
            ("model.attention", self.attention, ATTENTION_KINDS),
            ("model.fusion", self.fusion, FUSION_MODES),
        ):
            if value not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {value!r}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SamConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown model settings: {', '.join(unknown)}")
        return cls(**data)


class Attention(NamedTuple):
    """One attention block's output plus the pieces tests inspect."""

    z: Tensor
    a_self: Optional[Tensor]
    a_cross: Tensor
    lam_self: Optional[Tensor]
    lam_cross: Optional[Tensor]


def init_params(config: SamConfig, rng: np.random.Generator) -> ParamStore:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases and zero lambda vectors."""
    d, d_hid = config.d, config.d_hid
    store = ParamStore()
    if config.pre_encoder == "linear":
        store.uniform("pe.weight", (FEATURE_CHANNELS, d), FEATURE_CHANNELS, rng)
        store.zeros("pe.bias", (d,))
    else:
        store.uniform("pe.w_ih", (FEATURE_CHANNELS, 4 * d), FEATURE_CHANNELS, rng)
        store.uniform("pe.w_hh", (d, 4 * d), d, rng)
        store.zeros("pe.bias", (4 * d,))
    for layer in range(config.layers):
        for branch in BRANCHES:
            prefix = f"layers.{layer}.{branch}"
            for name in ("w_q", "w_k", "w_v"):
                store.uniform(f"{prefix}.{name}", (d, d), d, rng)
            if config.attention == "semantic":
                for name in ("lambda_q", "lambda_k", "lambda_v"):
                    store.zeros(f"{prefix}.{name}", (d,))
            store.uniform(f"{prefix}.ffn.w1", (d, d_hid), d, rng)
            store.zeros(f"{prefix}.ffn.b1", (d_hid,))
            store.uniform(f"{prefix}.ffn.w2", (d_hid, d), d_hid, rng)
            store.zeros(f"{prefix}.ffn.b2", (d,))
            store.ones(f"{prefix}.norm.gain", (d,))
            store.zeros(f"{prefix}.norm.bias", (d,))
    return store


class SamModel:
    """Encoder parameters bound to a config; all forward passes read ``self.params``."""

    def __init__(self, config: SamConfig, seed: int = 0, params: Optional[ParamStore] = None):
        self.config = config.validate()
        self.params = params if params is not None else init_params(config, np.random.default_rng(seed))

    def frozen(self) -> "SamModel":
        """Same values, no gradient recording."""
        return SamModel(self.config, params=self.params.frozen())

    def _heads(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        return T.permute(T.reshape(x, (n, self.config.heads, self.config.head_dim)), (1, 0, 2))

    def _merge(self, x: Tensor) -> Tensor:
        n = x.shape[1]
        return T.reshape(T.permute(x, (1, 0, 2)), (n, self.config.d))

    def pre_encode(self, e) -> Tensor:
        """Map (n, 2) features to (n, d) initial states."""
        e = T.as_tensor(e)
        if e.ndim != 2 or e.shape[1] != FEATURE_CHANNELS:
            raise ShapeError(f"pre_encode expects (n, {FEATURE_CHANNELS}) features, got shape {e.shape}")
        p = self.params
        if self.config.pre_encoder == "linear":
            return F.linear(e, p["pe.weight"], p["pe.bias"])
        return F.lstm_sequence(e, F.LstmWeights(p["pe.w_ih"], p["pe.w_hh"], p["pe.bias"]))

    def attend(self, zq: Tensor, zkv: Tensor, prefix: str) -> Attention:
        """Multi-head fused self/cross attention, before the feed-forward sublayer.

        Q comes from ``zq``, K and V from ``zkv``. Cross scores are Q K^T and
        self scores are K V^T, each scaled by sqrt(head_dim) and softmaxed per
        head; exp(sum lambda_q * lambda_k) and exp(sum lambda_k * lambda_v)
        weight them, shared across heads.
        """
        if zq.shape != zkv.shape or zq.ndim != 2 or zq.shape[1] != self.config.d:
            raise ShapeError(f"attend: query {zq.shape} and key/value {zkv.shape} must both be (n, {self.config.d})")
        p = self.params
        q = self._heads(T.matmul(zq, p[f"{prefix}.w_q"]))
        k = self._heads(T.matmul(zkv, p[f"{prefix}.w_k"]))
        v = self._heads(T.matmul(zkv, p[f"{prefix}.w_v"]))
        inv_scale = 1.0 / np.sqrt(self.config.head_dim)
        a_cross = T.softmax_rows(T.scale(T.matmul(q, T.transpose(k)), inv_scale))
        a_self = T.softmax_rows(T.scale(T.matmul(k, T.transpose(v)), inv_scale))
        lam_cross = T.exp(T.sum(p[f"{prefix}.lambda_q"] * p[f"{prefix}.lambda_k"]))
        lam_self = T.exp(T.sum(p[f"{prefix}.lambda_k"] * p[f"{prefix}.lambda_v"]))
        mixed = lam_self * a_self + lam_cross * a_cross
        return Attention(self._merge(T.matmul(mixed, v)), a_self, a_cross, lam_self, lam_cross)

    def self_attend(self, z: Tensor, prefix: str) -> Attention:
        """Plain scaled dot-product self-attention over one branch."""
        p = self.params
        q = self._heads(T.matmul(z, p[f"{prefix}.w_q"]))
        k = self._heads(T.matmul(z, p[f"{prefix}.w_k"]))
        v = self._heads(T.matmul(z, p[f"{prefix}.w_v"]))
        a = T.softmax_rows(T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(self.config.head_dim)))
        return Attention(self._merge(T.matmul(a, v)), None, a, None, None)

    def feed_forward_norm(self, z: Tensor, prefix: str) -> Tensor:
        """Norm(Z + FFN(Z))."""
        p = self.params
        ffn = F.feed_forward(z, p[f"{prefix}.ffn.w1"], p[f"{prefix}.ffn.b1"],
                             p[f"{prefix}.ffn.w2"], p[f"{prefix}.ffn.b2"])
        return T.layer_norm(z + ffn, p[f"{prefix}.norm.gain"], p[f"{prefix}.norm.bias"])

    def saa(self, zq: Tensor, zkv: Tensor, prefix: str) -> Tensor:
        return self.feed_forward_norm(self.attend(zq, zkv, prefix).z, prefix)

    def dual_saa_layer(self, z_gps: Tensor, z_grid: Tensor, layer: int) -> Tuple[Tensor, Tensor]:
        """Both directions read the previous layer's partner."""
        if z_gps.shape != z_grid.shape:
            raise ShapeError(f"dual layer: GPS states {z_gps.shape} and grid states {z_grid.shape} differ")
        if self.config.attention == "vanilla":
            return tuple(
                self.feed_forward_norm(self.self_attend(z, f"layers.{layer}.{branch}").z, f"layers.{layer}.{branch}")
                for z, branch in ((z_gps, "gps"), (z_grid, "grid"))
            )
        return (
            self.saa(z_gps, z_grid, f"layers.{layer}.gps"),
            self.saa(z_grid, z_gps, f"layers.{layer}.grid"),
        )

    def encode_pair(self, e_gps, e_grid) -> Tensor:
        """Sequence-level (n, d) encoding of aligned GPS and grid channels."""
        e_gps, e_grid = T.as_tensor(e_gps), T.as_tensor(e_grid)
        if e_gps.shape != e_grid.shape:
            raise ShapeError(f"GPS features {e_gps.shape} and grid features {e_grid.shape} are misaligned")
        z_gps, z_grid = self.pre_encode(e_gps), self.pre_encode(e_grid)
        for layer in range(self.config.layers):
            z_gps, z_grid = self.dual_saa_layer(z_gps, z_grid, layer)
        if self.config.fusion == "gps":
            return z_gps
        if self.config.fusion == "grid":
            return z_grid
        eps = self.config.epsilon
        return T.scale(z_gps, eps) + T.scale(z_grid, 1.0 - eps)

    def encode_sequence(self, features: TrajectoryFeatures) -> Tensor:
        return self.encode_pair(features.gps, features.grid)

    def encode(self, features: TrajectoryFeatures) -> Tensor:
        """Mean-pooled embedding of length d."""
        return T.mean(self.encode_sequence(features), axis=0)

    def encode_batch(self, batch: List[TrajectoryFeatures]) -> Tensor:
        """Stack per-trajectory embeddings into a (B, d) tensor."""
        return T.concat_rows(*(self.encode(f) for f in batch))

    def embed(self, batch: List[TrajectoryFeatures]) -> np.ndarray:
        """Gradient-free (B, d) embeddings."""
        frozen = self.frozen()
        return np.stack([frozen.encode(f).data for f in batch]) if batch else np.zeros((0, self.config.d))
