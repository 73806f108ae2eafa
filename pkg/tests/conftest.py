"""Shared fixtures: tiny planar trajectories, a synthetic corpus and a small encoder."""

import math

import numpy as np
import pytest

from trajsim.core.grid import METERS_PER_DEGREE, make_grid
from trajsim.core.synthetic import random_walk_clusters
from trajsim.core.trajectory import BoundingBox, Trajectory
from trajsim.model.sam import SamConfig, SamModel

PORTO = BoundingBox(-8.519, -8.005, 41.1001, 41.2086)


def square_bbox(meters: float = 1000.0, lon0: float = 0.0, lat0: float = 0.0) -> BoundingBox:
    """Bounding box whose metric extent is ``meters`` on both axes."""
    dlat = meters / METERS_PER_DEGREE
    mid = lat0 + dlat / 2
    dlon = meters / (METERS_PER_DEGREE * math.cos(math.radians(mid)))
    return BoundingBox(lon0, lon0 + dlon, lat0, lat0 + dlat)


def write_csv(path, rows, header="traj_id,seq,lon,lat"):
    lines = [header] + [",".join(str(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def porto():
    return PORTO


@pytest.fixture
def porto_grid():
    return make_grid(PORTO, 100.0)


@pytest.fixture
def corpus():
    """60 clustered random walks inside the Porto box."""
    return random_walk_clusters(PORTO, count=60, clusters=6, min_len=20, max_len=40, seed=7)


@pytest.fixture
def planar_pair():
    a = Trajectory.from_points("a", [(0.0, 0.0), (1.0, 0.0)])
    b = Trajectory.from_points("b", [(0.0, 1.0), (1.0, 1.0)])
    return a, b


@pytest.fixture
def tiny_config():
    return SamConfig(d=8, d_hid=16, layers=1, heads=2, epsilon=0.5)


@pytest.fixture
def tiny_model(tiny_config):
    return SamModel(tiny_config, seed=3)


@pytest.fixture
def make_square_bbox():
    return square_bbox


@pytest.fixture
def csv_file(tmp_path):
    """Write ``rows`` as an ingestion CSV under tmp_path and return its path."""

    def _write(rows, name="trajs.csv", header="traj_id,seq,lon,lat"):
        return write_csv(tmp_path / name, rows, header)

    return _write
