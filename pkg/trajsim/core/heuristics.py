"""Exact heuristic trajectory distances: SSPD, Hausdorff and discrete Frechet.

All kernels work on (n, 2) float64 point arrays in a planar frame. With a
:class:`~trajsim.core.grid.Projection` the lon/lat inputs are first mapped
to local meters; without one the raw coordinates are treated as (x, y).
"""

from typing import Optional, Union

import numpy as np
from numba import njit

from trajsim.core.grid import Projection
from trajsim.core.trajectory import Trajectory
from trajsim.errors import DataError

METRICS = ("sspd", "hausdorff", "frechet")
METRIC_CODES = {name: code for code, name in enumerate(METRICS)}

TrajectoryLike = Union[Trajectory, np.ndarray]


@njit(nogil=True, cache=True)
def _dist(ax, ay, bx, by):
    dx = ax - bx
    dy = ay - by
    return np.sqrt(dx * dx + dy * dy)


@njit(nogil=True, cache=True)
def _point_segment(px, py, x0, y0, x1, y1):
    vx = x1 - x0
    vy = y1 - y0
    length2 = vx * vx + vy * vy
    if length2 == 0.0:
        return _dist(px, py, x0, y0)
    t = ((px - x0) * vx + (py - y0) * vy) / length2
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    return _dist(px, py, x0 + t * vx, y0 + t * vy)


@njit(nogil=True, cache=True)
def _frechet_kernel(a, b):
    na = a.shape[0]
    nb = b.shape[0]
    prev = np.empty(nb)
    cur = np.empty(nb)
    for i in range(na):
        for j in range(nb):
            d = _dist(a[i, 0], a[i, 1], b[j, 0], b[j, 1])
            if i == 0 and j == 0:
                c = d
            elif i == 0:
                c = max(cur[j - 1], d)
            elif j == 0:
                c = max(prev[0], d)
            else:
                c = max(min(prev[j], cur[j - 1], prev[j - 1]), d)
            cur[j] = c
        prev, cur = cur, prev
    return prev[nb - 1]


@njit(nogil=True, cache=True)
def _directed_hausdorff(a, b):
    worst = 0.0
    for i in range(a.shape[0]):
        best = np.inf
        for j in range(b.shape[0]):
            d = _dist(a[i, 0], a[i, 1], b[j, 0], b[j, 1])
            if d < best:
                best = d
        if best > worst:
            worst = best
    return worst


@njit(nogil=True, cache=True)
def _hausdorff_kernel(a, b):
    return max(_directed_hausdorff(a, b), _directed_hausdorff(b, a))


@njit(nogil=True, cache=True)
def _spd(a, b):
    total = 0.0
    for i in range(a.shape[0]):
        best = np.inf
        for j in range(b.shape[0] - 1):
            d = _point_segment(a[i, 0], a[i, 1], b[j, 0], b[j, 1], b[j + 1, 0], b[j + 1, 1])
            if d < best:
                best = d
        total += best
    return total / a.shape[0]


@njit(nogil=True, cache=True)
def _sspd_kernel(a, b):
    return 0.5 * (_spd(a, b) + _spd(b, a))


@njit(nogil=True, cache=True)
def _pair_kernel(a, b, code):
    if code == 0:
        return _sspd_kernel(a, b)
    if code == 1:
        return _hausdorff_kernel(a, b)
    return _frechet_kernel(a, b)


@njit(nogil=True, cache=True)
def fill_row(flat, offsets, i, code, out_row):
    """Distances from trajectory ``i`` to every later trajectory.

    ``flat`` stacks all point arrays; trajectory k spans
    ``flat[offsets[k]:offsets[k + 1]]``. ``out_row[j]`` receives d(i, j) for j > i.
    """
    a = flat[offsets[i]:offsets[i + 1]]
    for j in range(i + 1, offsets.shape[0] - 1):
        out_row[j] = _pair_kernel(a, flat[offsets[j]:offsets[j + 1]], code)


def as_points(traj: TrajectoryLike, projection: Optional[Projection] = None) -> np.ndarray:
    """Contiguous planar (n, 2) float64 points for a trajectory or raw array."""
    coords = traj.coords if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
    coords = coords.reshape(-1, 2)
    if projection is not None:
        coords = projection.project(coords)
    return np.ascontiguousarray(coords, dtype=np.float64)


def _label(traj: TrajectoryLike) -> str:
    return repr(traj.id) if isinstance(traj, Trajectory) else "trajectory"


def _pair(a: TrajectoryLike, b: TrajectoryLike, projection: Optional[Projection], min_points: int):
    pa, pb = as_points(a, projection), as_points(b, projection)
    for traj, pts in ((a, pa), (b, pb)):
        if len(pts) < min_points:
            raise DataError(
                f"{_label(traj)} has {len(pts)} points; this distance needs at least {min_points}"
            )
    return pa, pb


def frechet_discrete(a: TrajectoryLike, b: TrajectoryLike,
                     projection: Optional[Projection] = None) -> float:
    """Discrete Frechet distance by the O(n_a * n_b) coupling recurrence."""
    pa, pb = _pair(a, b, projection, 1)
    return float(_frechet_kernel(pa, pb))


def hausdorff(a: TrajectoryLike, b: TrajectoryLike,
              projection: Optional[Projection] = None) -> float:
    """Symmetric point-set Hausdorff distance."""
    pa, pb = _pair(a, b, projection, 1)
    return float(_hausdorff_kernel(pa, pb))


def sspd(a: TrajectoryLike, b: TrajectoryLike,
         projection: Optional[Projection] = None) -> float:
    """Symmetric segment-path distance (mean point-to-polyline, both ways)."""
    pa, pb = _pair(a, b, projection, 2)
    return float(_sspd_kernel(pa, pb))


DISTANCES = {"sspd": sspd, "hausdorff": hausdorff, "frechet": frechet_discrete}


def distance(metric: str, a: TrajectoryLike, b: TrajectoryLike,
             projection: Optional[Projection] = None) -> float:
    if metric not in DISTANCES:
        raise DataError(f"Unknown metric {metric!r}; expected one of {METRICS}")
    return DISTANCES[metric](a, b, projection)
