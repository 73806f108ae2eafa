"""Small reverse-mode differentiation layer used by the encoder and losses."""

from trajsim.nn.optim import Adam, sgd_step
from trajsim.nn.params import ParamStore, load_into, read_checkpoint
from trajsim.nn.tensor import Tensor

__all__ = ["Adam", "ParamStore", "Tensor", "load_into", "read_checkpoint", "sgd_step"]
