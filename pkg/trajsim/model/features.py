"""Normalized GPS and grid feature channels fed to the encoder."""

from typing import NamedTuple, Optional

import numpy as np

from trajsim.core.grid import GridSequence, GridSpec, cells_of, to_grid_sequence
from trajsim.core.trajectory import BoundingBox, Trajectory
from trajsim.errors import DataError


class TrajectoryFeatures(NamedTuple):
    """Aligned (n, 2) GPS and grid channels, both scaled to roughly [0, 1]."""

    gps: np.ndarray
    grid: np.ndarray

    def __len__(self) -> int:
        return len(self.gps)


def gps_features(coords: np.ndarray, bbox: BoundingBox) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    lo = np.array([bbox.lon_min, bbox.lat_min])
    span = np.array([bbox.lon_max - bbox.lon_min, bbox.lat_max - bbox.lat_min])
    return (coords - lo) / span


def grid_features(cells: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Normalized cell centers in (lon, lat) order, matching the GPS channel."""
    cells = np.asarray(cells, dtype=np.float64).reshape(-1, 2)
    return (cells[:, ::-1] - 0.5) / np.array([grid.U, grid.M], dtype=np.float64)


def featurize(traj: Trajectory, grid: GridSpec, grid_seq: Optional[GridSequence] = None) -> TrajectoryFeatures:
    """Feature pair for a preprocessed trajectory; every point must lie in the grid bbox."""
    if grid_seq is None:
        grid_seq = to_grid_sequence(traj, grid)
    elif len(grid_seq) != len(traj):
        raise DataError(
            f"Trajectory {traj.id!r} has {len(traj)} points but its grid sequence has {len(grid_seq)}"
        )
    return TrajectoryFeatures(gps_features(traj.coords, grid.bbox), grid_features(grid_seq.cells, grid))


def featurize_points(coords: np.ndarray, grid: GridSpec) -> TrajectoryFeatures:
    """Feature pair for resampled points, clipped into the bbox before cell lookup."""
    bbox = grid.bbox
    clipped = np.column_stack([
        np.clip(coords[:, 0], bbox.lon_min, bbox.lon_max),
        np.clip(coords[:, 1], bbox.lat_min, bbox.lat_max),
    ])
    return TrajectoryFeatures(gps_features(clipped, bbox), grid_features(cells_of(clipped, grid), grid))
