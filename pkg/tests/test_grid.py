import numpy as np
import pytest

from trajsim.core.grid import cells_of, make_grid, to_grid_sequence
from trajsim.core.trajectory import Trajectory
from trajsim.errors import ConfigError, DataError


def test_square_kilometre_gives_ten_by_ten(make_square_bbox):
    grid = make_grid(make_square_bbox(1000.0), 100.0)
    assert (grid.M, grid.U) == (10, 10)


def test_large_cell_gives_single_cell(make_square_bbox):
    grid = make_grid(make_square_bbox(1000.0), 5000.0)
    assert (grid.M, grid.U) == (1, 1)


@pytest.mark.parametrize("cell_size", [0.0, -5.0])
def test_cell_size_must_be_positive(make_square_bbox, cell_size):
    with pytest.raises(ConfigError):
        make_grid(make_square_bbox(), cell_size)


def test_corner_points_map_to_first_and_last_cell(make_square_bbox):
    bbox = make_square_bbox(1000.0)
    grid = make_grid(bbox, 100.0)
    traj = Trajectory.from_points("c", [(bbox.lon_min, bbox.lat_min), (bbox.lon_max, bbox.lat_max)])
    cells = to_grid_sequence(traj, grid).cells
    assert cells[0].tolist() == [1, 1]
    assert cells[1].tolist() == [grid.M, grid.U]


def test_points_straddling_an_edge_fall_in_different_cells(make_square_bbox):
    bbox = make_square_bbox(1000.0)
    grid = make_grid(bbox, 100.0)
    proj = grid.projection
    # 0.5 m either side of the 200 m northing line
    lats = [bbox.lat_min + 199.5 / proj.meters_per_lat, bbox.lat_min + 200.5 / proj.meters_per_lat]
    lon = bbox.lon_min + 50.0 / proj.meters_per_lon
    cells = cells_of(np.array([[lon, lats[0]], [lon, lats[1]]]), grid)
    assert cells[:, 0].tolist() == [2, 3]
    assert cells[0, 1] == cells[1, 1] == 1


def test_point_outside_bbox_is_reported_by_index(make_square_bbox):
    bbox = make_square_bbox(1000.0)
    grid = make_grid(bbox, 100.0)
    traj = Trajectory.from_points("t", [(bbox.lon_min, bbox.lat_min), (bbox.lon_max + 1.0, bbox.lat_min)])
    with pytest.raises(DataError, match="point 1"):
        to_grid_sequence(traj, grid)


def test_porto_grid_dimensions(porto_grid):
    # roughly 43 km by 12 km
    assert 115 <= porto_grid.M <= 125
    assert 425 <= porto_grid.U <= 440


def _to_lonlat(meters, grid):
    proj = grid.projection
    meters = np.asarray(meters, dtype=np.float64)
    return np.column_stack([proj.origin_lon + meters[:, 0] / proj.meters_per_lon,
                            proj.origin_lat + meters[:, 1] / proj.meters_per_lat])


@pytest.fixture
def km_grid(make_square_bbox):
    return make_grid(make_square_bbox(1000.0), 100.0)


def test_cells_depend_only_on_coordinates(km_grid, rng):
    coords = _to_lonlat(rng.uniform(1.0, 999.0, size=(50, 2)), km_grid)
    first = to_grid_sequence(Trajectory.from_points("a", coords), km_grid).cells
    again = to_grid_sequence(Trajectory.from_points("a", coords), km_grid).cells
    renamed = to_grid_sequence(Trajectory.from_points("zz-9", coords), km_grid).cells
    np.testing.assert_array_equal(first, again)
    np.testing.assert_array_equal(first, renamed)


def test_cell_centers_map_back_to_their_cells(km_grid, rng):
    cells = to_grid_sequence(Trajectory.from_points("a", _to_lonlat(rng.uniform(1.0, 999.0, size=(80, 2)), km_grid)),
                             km_grid).cells
    centers = (cells[:, ::-1] - 0.5) * km_grid.cell_size
    again = to_grid_sequence(Trajectory.from_points("a", _to_lonlat(centers, km_grid)), km_grid).cells
    np.testing.assert_array_equal(again, cells)


def test_jitter_inside_a_cell_keeps_the_cell(km_grid, rng):
    meters = rng.uniform(1.0, 999.0, size=(200, 2))
    offset = meters % km_grid.cell_size
    room = np.minimum(offset, km_grid.cell_size - offset)
    jittered = meters + 0.9 * room * rng.uniform(-1.0, 1.0, size=meters.shape)
    np.testing.assert_array_equal(cells_of(_to_lonlat(jittered, km_grid), km_grid),
                                  cells_of(_to_lonlat(meters, km_grid), km_grid))


def test_jitter_below_cell_size_moves_at_most_one_cell(km_grid, rng):
    meters = rng.uniform(100.0, 900.0, size=(200, 2))
    jittered = meters + rng.uniform(-99.0, 99.0, size=meters.shape)
    moved = cells_of(_to_lonlat(jittered, km_grid), km_grid) - cells_of(_to_lonlat(meters, km_grid), km_grid)
    assert np.abs(moved).max() <= 1
