"""
Environmental feature raster.

Grid CSV layout (one file, no GDAL needed):

    width,height,lon_min,lon_max,lat_min,lat_max,n_features
    <those seven values>
    <cell 0 feature values, comma separated>
    <cell 1 ...>

Cells are stored row-major: row 0 is the southernmost row (lat_min),
column 0 the westernmost (lon_min). Cell (row, col) is line
3 + row * width + col.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import pandas as pd

from src.utils.errors import DataValidationError

logger = logging.getLogger(__name__)

GRID_HEADER = ["width", "height", "lon_min", "lon_max", "lat_min", "lat_max", "n_features"]
EDGE_TOLERANCE = 1e-9  # in cell widths


@dataclass(frozen=True)
class EnvGrid:
    """Rectangular raster of F finite features per cell; `features` has shape (height, width, F)."""

    width: int
    height: int
    bounds: Tuple[float, float, float, float]  # lon_min, lon_max, lat_min, lat_max
    features: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DataValidationError(f"grid needs at least one cell, got {self.width}x{self.height}")
        lon_min, lon_max, lat_min, lat_max = self.bounds
        if not lon_min < lon_max or not lat_min < lat_max:
            raise DataValidationError(f"degenerate grid bounds {self.bounds}")
        if lon_min < -180 or lon_max > 180 or lat_min < -90 or lat_max > 90:
            raise DataValidationError(f"grid bounds {self.bounds} leave the valid degree ranges")

        features = np.array(self.features, dtype=np.float64)
        if features.ndim != 3 or features.shape[:2] != (self.height, self.width) or features.shape[2] < 1:
            raise DataValidationError(
                f"feature array shape {features.shape} does not match grid {self.height}x{self.width}xF"
            )
        if not np.all(np.isfinite(features)):
            raise DataValidationError("grid features contain non-finite values")
        features.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))

    @property
    def n_features(self) -> int:
        return self.features.shape[2]

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    @property
    def cell_size(self) -> Tuple[float, float]:
        lon_min, lon_max, lat_min, lat_max = self.bounds
        return (lon_max - lon_min) / self.width, (lat_max - lat_min) / self.height

    @property
    def flat_features(self) -> np.ndarray:
        """(n_cells, F) view in row-major cell order."""
        return self.features.reshape(self.n_cells, self.n_features)

    def contains(self, lon, lat) -> np.ndarray:
        lon_min, lon_max, lat_min, lat_max = self.bounds
        lon = np.asarray(lon, dtype=np.float64)
        lat = np.asarray(lat, dtype=np.float64)
        return (lon >= lon_min) & (lon <= lon_max) & (lat >= lat_min) & (lat <= lat_max)

    def cell_index(self, lon, lat) -> Tuple[np.ndarray, np.ndarray]:
        """
        Row and column of the cell holding each point.

        A point on a shared edge belongs to the cell with the lower index.
        Edges are widened by EDGE_TOLERANCE cell widths, so a coordinate that
        names an edge (0.1 on a 0.3-wide, 3-cell axis) lands on it even when
        the float edge is one ulp below.
        """
        lon = np.asarray(lon, dtype=np.float64)
        lat = np.asarray(lat, dtype=np.float64)
        inside = self.contains(lon, lat)
        if not np.all(inside):
            bad = np.flatnonzero(~np.atleast_1d(inside))[0]
            raise DataValidationError(
                f"point ({np.atleast_1d(lon)[bad]}, {np.atleast_1d(lat)[bad]}) is outside grid bounds {self.bounds}"
            )
        lon_min, lon_max, lat_min, lat_max = self.bounds
        col = _axis_index(lon, lon_min, lon_max, self.width)
        row = _axis_index(lat, lat_min, lat_max, self.height)
        return row, col

    def cell_origin(self, flat_index) -> Tuple[np.ndarray, np.ndarray]:
        """South-west corner (lon, lat) of each flat cell index."""
        flat_index = np.asarray(flat_index, dtype=np.int64)
        row, col = np.divmod(flat_index, self.width)
        lon_min, _, lat_min, _ = self.bounds
        dx, dy = self.cell_size
        return lon_min + col * dx, lat_min + row * dy

    def jitter_in_cells(self, flat_index, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """
        Uniform point inside each given cell.

        Offsets are drawn in (0, 1] so a point never lands on the lower edge,
        which the tie rule would hand to the neighbouring cell.
        """
        flat_index = np.asarray(flat_index, dtype=np.int64)
        lon0, lat0 = self.cell_origin(flat_index)
        dx, dy = self.cell_size
        # kept clear of the widened lower edge
        u = np.maximum(1.0 - rng.random(flat_index.shape), 2.0 * EDGE_TOLERANCE)
        v = np.maximum(1.0 - rng.random(flat_index.shape), 2.0 * EDGE_TOLERANCE)
        lon_min, lon_max, lat_min, lat_max = self.bounds
        lons = np.minimum(lon0 + u * dx, lon_max)
        lats = np.minimum(lat0 + v * dy, lat_max)
        return lons, lats


def _axis_index(values: np.ndarray, lo: float, hi: float, n: int) -> np.ndarray:
    edges = np.linspace(lo, hi, n + 1) + EDGE_TOLERANCE * (hi - lo) / n
    index = np.searchsorted(edges, values, side="left") - 1
    return np.clip(index, 0, n - 1).astype(np.int64)


def extract_features_batch(grid: EnvGrid, lons, lats) -> np.ndarray:
    """Nearest-cell feature lookup for many points, shape (n, F)."""
    row, col = grid.cell_index(np.atleast_1d(lons), np.atleast_1d(lats))
    return grid.features[row, col, :]


def extract_features(grid: EnvGrid, lon: float, lat: float) -> np.ndarray:
    return extract_features_batch(grid, [lon], [lat])[0]


# -------------------------------------------------------------------
# Persistence
# -------------------------------------------------------------------

def save_grid_csv(grid: EnvGrid, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = pd.DataFrame(
        [[grid.width, grid.height, *grid.bounds, grid.n_features]], columns=GRID_HEADER
    )
    with open(path, "w", newline="") as handle:
        header.to_csv(handle, index=False, float_format="%.17g")
        pd.DataFrame(grid.flat_features).to_csv(handle, index=False, header=False, float_format="%.17g")
    return path


def load_grid_csv(path: Union[str, Path]) -> EnvGrid:
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"grid file not found: {path}")

    header = pd.read_csv(path, nrows=1, float_precision="round_trip")
    if list(header.columns) != GRID_HEADER:
        raise DataValidationError(f"grid header must be {','.join(GRID_HEADER)}, got {','.join(header.columns)}")
    meta = header.iloc[0]
    width, height, n_features = int(meta["width"]), int(meta["height"]), int(meta["n_features"])
    bounds = (float(meta["lon_min"]), float(meta["lon_max"]), float(meta["lat_min"]), float(meta["lat_max"]))

    values = pd.read_csv(path, skiprows=2, header=None, dtype=np.float64, float_precision="round_trip")
    if values.shape != (width * height, n_features):
        raise DataValidationError(
            f"grid body has shape {values.shape}, expected ({width * height}, {n_features})"
        )
    features = values.to_numpy().reshape(height, width, n_features)
    logger.debug("Loaded %dx%d grid with %d features from %s", width, height, n_features, path)
    return EnvGrid(width=width, height=height, bounds=bounds, features=features)
