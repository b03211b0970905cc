import numpy as np
import pytest

from src.data_collection.env_grid import EnvGrid, extract_features, extract_features_batch, load_grid_csv, save_grid_csv
from src.utils.errors import DataValidationError


def test_single_cell_grid_returns_its_vector():
    grid = EnvGrid(width=1, height=1, bounds=(-5.0, 5.0, 40.0, 50.0), features=[[[1.0, 2.0]]])
    for lon, lat in [(-5.0, 40.0), (0.3, 44.1), (5.0, 50.0)]:
        np.testing.assert_array_equal(extract_features(grid, lon, lat), [1.0, 2.0])


def test_point_resolves_to_containing_cell():
    features = np.arange(2 * 2 * 1, dtype=float).reshape(2, 2, 1)
    grid = EnvGrid(width=2, height=2, bounds=(0.0, 2.0, 0.0, 2.0), features=features)
    np.testing.assert_array_equal(extract_features(grid, 0.5, 0.5), features[0, 0])
    np.testing.assert_array_equal(extract_features(grid, 1.5, 0.5), features[0, 1])
    np.testing.assert_array_equal(extract_features(grid, 0.5, 1.5), features[1, 0])


def test_shared_edge_goes_to_lower_index(small_grid):
    # lon = 1.0 separates columns 0 and 1, lat = 1.0 separates rows 0 and 1
    np.testing.assert_array_equal(extract_features(small_grid, 1.0, 0.5), small_grid.features[0, 0])
    np.testing.assert_array_equal(extract_features(small_grid, 0.5, 1.0), small_grid.features[0, 0])
    np.testing.assert_array_equal(extract_features(small_grid, 3.0, 2.0), small_grid.features[1, 2])


def test_decimal_edge_goes_to_lower_index():
    # the float edge at 0.3 / 3 sits one ulp below 0.1
    grid = EnvGrid(width=3, height=1, bounds=(0.0, 0.3, 0.0, 1.0), features=[[[0.0], [1.0], [2.0]]])
    row, col = grid.cell_index([0.1, 0.2, 0.1000001, 0.0, 0.3], [0.5] * 5)
    np.testing.assert_array_equal(col, [0, 1, 1, 0, 2])
    np.testing.assert_array_equal(row, 0)


def test_outer_edges_stay_inside(small_grid):
    np.testing.assert_array_equal(extract_features(small_grid, 0.0, 0.0), small_grid.features[0, 0])
    np.testing.assert_array_equal(extract_features(small_grid, 4.0, 3.0), small_grid.features[2, 3])


def test_out_of_bounds_point_rejected(small_grid):
    with pytest.raises(DataValidationError, match="outside grid bounds"):
        extract_features(small_grid, 4.5, 1.0)
    with pytest.raises(DataValidationError):
        extract_features_batch(small_grid, [1.0, 1.0], [1.0, -0.1])


def test_batch_lookup_matches_single_lookups(small_grid, rng):
    lons = rng.uniform(0, 4, size=50)
    lats = rng.uniform(0, 3, size=50)
    batch = extract_features_batch(small_grid, lons, lats)
    for i in range(50):
        np.testing.assert_array_equal(batch[i], extract_features(small_grid, lons[i], lats[i]))


@pytest.mark.parametrize(
    "bounds",
    [(1.0, 1.0, 0.0, 1.0), (0.0, 1.0, 2.0, 1.0), (-190.0, 0.0, 0.0, 1.0)],
)
def test_invalid_bounds_rejected(bounds):
    with pytest.raises(DataValidationError):
        EnvGrid(width=1, height=1, bounds=bounds, features=[[[0.0]]])


def test_non_finite_features_rejected():
    with pytest.raises(DataValidationError, match="non-finite"):
        EnvGrid(width=1, height=1, bounds=(0.0, 1.0, 0.0, 1.0), features=[[[np.nan]]])


def test_grid_features_are_read_only(small_grid):
    with pytest.raises(ValueError):
        small_grid.features[0, 0, 0] = 99.0


def test_jittered_points_stay_in_their_cells(small_grid, rng):
    cells = rng.integers(0, small_grid.n_cells, size=500)
    lons, lats = small_grid.jitter_in_cells(cells, rng)
    row, col = small_grid.cell_index(lons, lats)
    np.testing.assert_array_equal(row * small_grid.width + col, cells)


def test_grid_csv_layout_and_reload(small_grid, tmp_path):
    path = save_grid_csv(small_grid, tmp_path / "grid.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "width,height,lon_min,lon_max,lat_min,lat_max,n_features"
    assert lines[1].split(",")[:2] == ["4", "3"]
    # row 0 (south) first, then column order
    assert [float(v) for v in lines[2].split(",")] == [0.0, -0.0]
    assert [float(v) for v in lines[3].split(",")] == [1.0, -1.0]
    assert len(lines) == 2 + small_grid.n_cells

    loaded = load_grid_csv(path)
    assert loaded.bounds == small_grid.bounds
    np.testing.assert_array_equal(loaded.features, small_grid.features)


def test_grid_csv_reload_is_bit_exact(tmp_path):
    rng = np.random.default_rng(8)
    grid = EnvGrid(width=5, height=4, bounds=(-10.1, 29.7, 35.3, 59.9), features=rng.normal(size=(4, 5, 3)))
    loaded = load_grid_csv(save_grid_csv(grid, tmp_path / "grid.csv"))
    assert loaded.bounds == grid.bounds
    np.testing.assert_array_equal(loaded.features, grid.features)


def test_grid_csv_with_wrong_body_rejected(tmp_path):
    path = tmp_path / "grid.csv"
    path.write_text("width,height,lon_min,lon_max,lat_min,lat_max,n_features\n2,1,0,2,0,1,1\n1.0\n")
    with pytest.raises(DataValidationError, match="grid body"):
        load_grid_csv(path)
