"""Trajectory encoder, bridge pretraining and ranking losses."""

from trajsim.model.bridge import BridgeSchedule, bridge_stats, pretrain_step, sample_bridge
from trajsim.model.losses import LossWeights, listnet_loss, mse_loss, rd_listnet_loss, total_loss
from trajsim.model.sam import SamConfig, SamModel

__all__ = [
    "BridgeSchedule",
    "LossWeights",
    "SamConfig",
    "SamModel",
    "bridge_stats",
    "listnet_loss",
    "mse_loss",
    "pretrain_step",
    "rd_listnet_loss",
    "sample_bridge",
    "total_loss",
]
