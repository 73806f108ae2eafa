"""Synthetic trajectory corpora: mixtures of random-walk clusters."""

import logging
from typing import List

import numpy as np

from trajsim.core.grid import Projection
from trajsim.core.trajectory import BoundingBox, Trajectory
from trajsim.errors import ConfigError

logger = logging.getLogger(__name__)


def _base_walk(rng: np.random.Generator, length: int, step: float, start: np.ndarray) -> np.ndarray:
    # correlated random walk in meters; heading drifts slowly
    headings = rng.uniform(0.0, 2.0 * np.pi) + np.cumsum(rng.normal(0.0, 0.25, size=length - 1))
    moves = step * np.column_stack([np.cos(headings), np.sin(headings)])
    return np.vstack([start, start + np.cumsum(moves, axis=0)])


def random_walk_clusters(
    bbox: BoundingBox,
    count: int = 300,
    clusters: int = 10,
    min_len: int = 20,
    max_len: int = 80,
    step: float = 60.0,
    jitter: float = 15.0,
    seed: int = 0,
) -> List[Trajectory]:
    """Generate ``count`` trajectories spread over ``clusters`` shared base walks.

    Members of a cluster follow a prefix of the cluster's base walk, shifted
    by a per-trajectory offset and perturbed by per-point Gaussian jitter
    (both in meters). Coordinates are clipped into ``bbox``.
    """
    if count < 1 or clusters < 1:
        raise ConfigError("count and clusters must both be positive")
    if not 2 <= min_len <= max_len:
        raise ConfigError(f"Need 2 <= min_len <= max_len, got {min_len}, {max_len}")

    rng = np.random.default_rng(seed)
    projection = Projection.from_bbox(bbox)
    width = (bbox.lon_max - bbox.lon_min) * projection.meters_per_lon
    height = (bbox.lat_max - bbox.lat_min) * projection.meters_per_lat

    bases = []
    for _ in range(clusters):
        start = np.array([rng.uniform(0.2, 0.8) * width, rng.uniform(0.2, 0.8) * height])
        bases.append(_base_walk(rng, max_len, step, start))

    trajs = []
    for k in range(count):
        cluster = int(rng.integers(clusters))
        n = int(rng.integers(min_len, max_len + 1))
        offset = rng.normal(0.0, 2.0 * jitter, size=2)
        meters = bases[cluster][:n] + offset + rng.normal(0.0, jitter, size=(n, 2))
        meters[:, 0] = np.clip(meters[:, 0], 0.0, width)
        meters[:, 1] = np.clip(meters[:, 1], 0.0, height)
        coords = np.column_stack([
            np.clip(bbox.lon_min + meters[:, 0] / projection.meters_per_lon, bbox.lon_min, bbox.lon_max),
            np.clip(bbox.lat_min + meters[:, 1] / projection.meters_per_lat, bbox.lat_min, bbox.lat_max),
        ])
        trajs.append(Trajectory(f"c{cluster:02d}-{k:05d}", coords))

    logger.debug("Generated %d synthetic trajectories in %d clusters", count, clusters)
    return trajs
