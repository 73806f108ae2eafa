"""Equirectangular projection and uniform grid discretization."""

import math
from dataclasses import dataclass

import numpy as np

from trajsim.core.trajectory import BoundingBox, Trajectory
from trajsim.errors import ConfigError, DataError

METERS_PER_DEGREE = 111_320.0

# extents within this fraction of a cell from a boundary snap down
_CEIL_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Projection:
    """Local equirectangular projection anchored at the bbox south-west corner.

    1 degree of latitude is 111,320 m and 1 degree of longitude is
    111,320 * cos(mid-latitude) m.
    """

    origin_lon: float
    origin_lat: float
    meters_per_lon: float
    meters_per_lat: float = METERS_PER_DEGREE

    @classmethod
    def from_bbox(cls, bbox: BoundingBox) -> "Projection":
        mid_lat = 0.5 * (bbox.lat_min + bbox.lat_max)
        return cls(
            origin_lon=bbox.lon_min,
            origin_lat=bbox.lat_min,
            meters_per_lon=METERS_PER_DEGREE * math.cos(math.radians(mid_lat)),
        )

    @property
    def scale(self):
        return self.meters_per_lon, self.meters_per_lat

    def project(self, coords: np.ndarray) -> np.ndarray:
        """Map (n, 2) lon/lat degrees to (n, 2) east/north meters."""
        coords = np.asarray(coords, dtype=np.float64)
        out = np.empty_like(coords)
        out[:, 0] = (coords[:, 0] - self.origin_lon) * self.meters_per_lon
        out[:, 1] = (coords[:, 1] - self.origin_lat) * self.meters_per_lat
        return out


@dataclass(frozen=True)
class GridSpec:
    """Uniform M x U partition of a bounding box; rows run south to north."""

    bbox: BoundingBox
    cell_size: float
    M: int
    U: int

    @property
    def projection(self) -> Projection:
        return Projection.from_bbox(self.bbox)


@dataclass(frozen=True, eq=False)
class GridSequence:
    """1-based (row, column) cell per trajectory point, as an (n, 2) int array."""

    cells: np.ndarray

    def __len__(self) -> int:
        return len(self.cells)


def _cell_count(extent: float, cell_size: float) -> int:
    return max(1, math.ceil(extent / cell_size - _CEIL_TOLERANCE))


def make_grid(bbox: BoundingBox, cell_size: float = 100.0) -> GridSpec:
    """Partition ``bbox`` into square cells of ``cell_size`` meters."""
    if not (cell_size > 0 and math.isfinite(cell_size)):
        raise ConfigError(f"grid.cell_size must be a positive number of meters, got {cell_size}")
    projection = Projection.from_bbox(bbox)
    height = (bbox.lat_max - bbox.lat_min) * projection.meters_per_lat
    width = (bbox.lon_max - bbox.lon_min) * projection.meters_per_lon
    if not (height > 0 and width > 0):
        raise ConfigError(f"Degenerate bounding box {bbox}: zero metric extent")
    return GridSpec(bbox=bbox, cell_size=float(cell_size),
                    M=_cell_count(height, cell_size), U=_cell_count(width, cell_size))


def cells_of(coords: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Cell coordinates for in-box points; upper-boundary points clamp to (M, U)."""
    meters = grid.projection.project(coords)
    rows = 1 + np.floor(meters[:, 1] / grid.cell_size).astype(np.int64)
    cols = 1 + np.floor(meters[:, 0] / grid.cell_size).astype(np.int64)
    return np.column_stack([np.clip(rows, 1, grid.M), np.clip(cols, 1, grid.U)])


def to_grid_sequence(traj: Trajectory, grid: GridSpec) -> GridSequence:
    """Map every point of ``traj`` to the grid cell containing it."""
    inside = grid.bbox.contains(traj.coords)
    if not bool(np.all(inside)):
        bad = int(np.argmin(inside))
        lon, lat = traj.coords[bad]
        raise DataError(
            f"Trajectory {traj.id!r}: point {bad} ({lon}, {lat}) lies outside the grid bounding box"
        )
    cells = cells_of(traj.coords, grid)
    cells.setflags(write=False)
    return GridSequence(cells)
