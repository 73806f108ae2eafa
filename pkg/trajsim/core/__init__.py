"""Trajectory data, grid discretization and heuristic distances."""

from trajsim.core.grid import GridSequence, GridSpec, Projection, make_grid, to_grid_sequence
from trajsim.core.heuristics import METRICS, distance, frechet_discrete, hausdorff, sspd
from trajsim.core.matrix import DistanceMatrix, build_matrix, load_matrix, save_matrix
from trajsim.core.trajectory import (
    BoundingBox,
    DatasetSplit,
    Point,
    Trajectory,
    load_trajectories,
    preprocess,
    resample,
    split_dataset,
)

__all__ = [
    "BoundingBox",
    "DatasetSplit",
    "DistanceMatrix",
    "GridSequence",
    "GridSpec",
    "METRICS",
    "Point",
    "Projection",
    "Trajectory",
    "build_matrix",
    "distance",
    "frechet_discrete",
    "hausdorff",
    "load_matrix",
    "load_trajectories",
    "make_grid",
    "preprocess",
    "resample",
    "save_matrix",
    "split_dataset",
    "sspd",
    "to_grid_sequence",
]
