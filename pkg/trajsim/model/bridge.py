"""Closed-form diffusion bridge between two trajectories and the pretraining objective."""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from trajsim.core.grid import GridSpec
from trajsim.core.trajectory import Trajectory, resample
from trajsim.errors import ConfigError, ShapeError
from trajsim.model.features import TrajectoryFeatures, featurize_points
from trajsim.model.sam import SamModel
from trajsim.nn import tensor as T
from trajsim.nn.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BridgeSchedule:
    """Linear beta schedule on [0, T] with variance-preserving sigma."""

    beta_min: float = 0.1
    beta_max: float = 20.0
    T: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.beta_min <= self.beta_max:
            raise ConfigError(
                f"Schedule needs 0 < beta_min <= beta_max, got {self.beta_min}, {self.beta_max}"
            )
        if not self.T > 0:
            raise ConfigError(f"Schedule horizon must be positive, got {self.T}")

    def _check(self, t: float) -> float:
        t = float(t)
        if not 0.0 <= t <= self.T:
            raise ConfigError(f"t={t} lies outside [0, {self.T}]")
        return t

    def alpha(self, t: float) -> float:
        t = self._check(t)
        integral = self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t
        return math.exp(-0.5 * integral)

    def sigma2(self, t: float) -> float:
        # -expm1 keeps precision near t = 0 where alpha^2 is close to 1
        t = self._check(t)
        integral = self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t
        return -math.expm1(-integral)

    def sigma(self, t: float) -> float:
        return math.sqrt(self.sigma2(t))

    def snr(self, t: float) -> float:
        s2 = self.sigma2(t)
        return math.inf if s2 == 0.0 else self.alpha(t) ** 2 / s2

    def rho(self, t: float) -> float:
        """SNR_T / SNR_t, written to stay exact at both endpoints."""
        t = self._check(t)
        if t == self.T:
            return 1.0
        s2 = self.sigma2(t)
        if s2 == 0.0:
            return 0.0
        return (self.alpha(self.T) ** 2 / self.sigma2(self.T)) * (s2 / self.alpha(t) ** 2)


@dataclass(frozen=True, eq=False)
class BridgeSample:
    t: float
    e_gps_t: np.ndarray
    e_grid_t: np.ndarray
    mu_hat: np.ndarray
    sigma_hat: float


def _check_pair(e0: np.ndarray, eT: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    e0, eT = np.asarray(e0, dtype=np.float64), np.asarray(eT, dtype=np.float64)
    if e0.shape != eT.shape:
        raise ShapeError(f"Bridge endpoints differ in shape: {e0.shape} vs {eT.shape}")
    return e0, eT


def _interpolate(schedule: BridgeSchedule, e0: np.ndarray, eT: np.ndarray, t: float) -> np.ndarray:
    rho = schedule.rho(t)
    if rho == 0.0:
        return e0.copy()
    if rho == 1.0:
        return eT.copy()
    alpha_t = schedule.alpha(t)
    return rho * (alpha_t / schedule.alpha(schedule.T)) * eT + alpha_t * e0 * (1.0 - rho)


def bridge_stats(schedule: BridgeSchedule, e0: np.ndarray, eT: np.ndarray, t: float) -> Tuple[np.ndarray, float]:
    """Mean and standard deviation of the bridge marginal at ``t``."""
    e0, eT = _check_pair(e0, eT)
    mu_hat = _interpolate(schedule, e0, eT, t)
    var = schedule.sigma2(t) * (1.0 - schedule.rho(t))
    return mu_hat, math.sqrt(max(var, 0.0))


def sample_bridge(
    schedule: BridgeSchedule,
    e0: np.ndarray,
    eT: np.ndarray,
    t: float,
    rng: np.random.Generator,
    grid0: Optional[np.ndarray] = None,
    gridT: Optional[np.ndarray] = None,
) -> BridgeSample:
    """Noisy GPS interpolant plus the noise-free grid interpolant at ``t``.

    Without grid endpoints the grid interpolant is taken between ``e0`` and ``eT``.
    """
    mu_hat, sigma_hat = bridge_stats(schedule, e0, eT, t)
    noise = rng.standard_normal(mu_hat.shape)
    e_gps_t = mu_hat if sigma_hat == 0.0 else mu_hat + sigma_hat * noise
    if grid0 is None or gridT is None:
        grid0, gridT = e0, eT
    grid0, gridT = _check_pair(grid0, gridT)
    if grid0.shape != mu_hat.shape:
        raise ShapeError(f"Grid endpoints {grid0.shape} do not match GPS endpoints {mu_hat.shape}")
    return BridgeSample(float(t), e_gps_t, _interpolate(schedule, grid0, gridT, t), mu_hat, sigma_hat)


def bridge_features(pair: Tuple[Trajectory, Trajectory], grid: GridSpec,
                    n: int = 64) -> Tuple[TrajectoryFeatures, TrajectoryFeatures]:
    """Resample both trajectories to ``n`` points by arc length and featurize them."""
    scale = grid.projection.scale
    return tuple(featurize_points(resample(traj, n, scale=scale), grid) for traj in pair)


def pretrain_loss(
    model: SamModel,
    start: TrajectoryFeatures,
    end: TrajectoryFeatures,
    schedule: BridgeSchedule,
    rng: np.random.Generator,
    t_range: Tuple[float, float] = (0.01, 0.99),
    t: Optional[float] = None,
) -> Tensor:
    """Mean squared gap between the encoder output at x_t and the pre-encoded bridge mean.

    The target branch runs on a frozen copy of the pre-encoder, so no gradient
    flows through it.
    """
    if t is None:
        t = float(rng.uniform(*t_range)) * schedule.T
    sample = sample_bridge(schedule, start.gps, end.gps, t, rng, start.grid, end.grid)
    h = model.encode_pair(sample.e_gps_t, sample.e_grid_t)
    target = model.frozen().pre_encode(sample.mu_hat)
    return T.squared_error(h, target)


def pretrain_step(
    model: SamModel,
    pair: Tuple[Trajectory, Trajectory],
    grid: GridSpec,
    schedule: BridgeSchedule,
    rng: np.random.Generator,
    n: int = 64,
    t_range: Tuple[float, float] = (0.01, 0.99),
) -> Optional[float]:
    """One pair's loss with gradients left in ``model.params.grads``.

    Returns ``None`` for a degenerate pair (same trajectory id twice).
    """
    first, second = pair
    if first.id == second.id:
        logger.warning("Skipping degenerate bridge pair (%s, %s)", first.id, second.id)
        return None
    start, end = bridge_features(pair, grid, n)
    loss = pretrain_loss(model, start, end, schedule, rng, t_range)
    model.params.backward(loss)
    return loss.item()
