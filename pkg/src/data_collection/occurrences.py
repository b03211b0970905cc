"""
Occurrence, evaluation-set and geo-prior case files.

Formats:
- occurrences:  lon,lat,species_id          (one presence record per row)
- eval sites:   site_id,lon,lat
- eval labels:  site_id,species_id,label    (pairs not listed are absences)
- geo-prior:    lon,lat,true_class,score_0,...,score_{S-1}
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.utils.errors import DataValidationError, ShapeMismatchError

logger = logging.getLogger(__name__)

OCCURRENCE_COLUMNS = ["lon", "lat", "species_id"]
SITE_COLUMNS = ["site_id", "lon", "lat"]
LABEL_COLUMNS = ["site_id", "species_id", "label"]


@dataclass(frozen=True, slots=True)
class OccurrenceRecord:
    lon: float
    lat: float
    species_id: int

    def __post_init__(self):
        if not -180.0 <= self.lon <= 180.0:
            raise DataValidationError(f"longitude {self.lon} outside [-180, 180]")
        if not -90.0 <= self.lat <= 90.0:
            raise DataValidationError(f"latitude {self.lat} outside [-90, 90]")
        if self.species_id < 0:
            raise DataValidationError(f"invalid species id {self.species_id}")


def records_to_arrays(records: Sequence[OccurrenceRecord]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    lons = np.fromiter((r.lon for r in records), dtype=np.float64, count=len(records))
    lats = np.fromiter((r.lat for r in records), dtype=np.float64, count=len(records))
    species = np.fromiter((r.species_id for r in records), dtype=np.int64, count=len(records))
    return lons, lats, species


# -------------------------------------------------------------------
# Parsing helpers
# -------------------------------------------------------------------

def _read_table(path: Path, expected: List[str]) -> pd.DataFrame:
    if not path.exists():
        raise DataValidationError(f"file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as exc:
        raise DataValidationError(f"malformed CSV {path}: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataValidationError(f"{path} is empty (a header line is required)") from exc

    columns = [c.strip() for c in df.columns]
    if columns[: len(expected)] != expected:
        raise DataValidationError(f"{path.name}: header must start with {','.join(expected)}, got {','.join(columns)}")
    df.columns = columns
    return df


def _parse_floats(column: pd.Series) -> np.ndarray:
    """Exact (round-trip) float parsing; unparsable cells become NaN."""
    try:
        return column.to_numpy(dtype=np.float64)
    except ValueError:
        return np.array([_float_or_nan(text) for text in column], dtype=np.float64)


def _float_or_nan(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return np.nan


def _numeric_column(df: pd.DataFrame, column: str, what: str) -> np.ndarray:
    values = _parse_floats(df[column])
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        # header is line 1
        raise DataValidationError(f"malformed {what} at line {int(bad[0]) + 2}")
    return values


def _integer_column(df: pd.DataFrame, column: str, what: str, minimum: int = 0) -> np.ndarray:
    values = _parse_floats(df[column])
    bad = np.flatnonzero(~np.isfinite(values) | (values != np.round(values)) | (values < minimum))
    if bad.size:
        raise DataValidationError(f"invalid {what} at line {int(bad[0]) + 2}")
    return values.astype(np.int64)


def _check_range(values: np.ndarray, low: float, high: float, what: str) -> None:
    bad = np.flatnonzero((values < low) | (values > high))
    if bad.size:
        raise DataValidationError(f"{what} {values[bad[0]]} out of range [{low}, {high}] at line {int(bad[0]) + 2}")


# -------------------------------------------------------------------
# Occurrences
# -------------------------------------------------------------------

def load_occurrences_csv(path: Union[str, Path]) -> List[OccurrenceRecord]:
    """Parse an occurrence CSV, keeping row order."""
    path = Path(path)
    df = _read_table(path, OCCURRENCE_COLUMNS)
    if df.empty:
        logger.info("No occurrence records in %s", path)
        return []

    lons = _numeric_column(df, "lon", "longitude")
    lats = _numeric_column(df, "lat", "latitude")
    species = _integer_column(df, "species_id", "species id")
    _check_range(lons, -180.0, 180.0, "longitude")
    _check_range(lats, -90.0, 90.0, "latitude")

    records = [OccurrenceRecord(float(x), float(y), int(s)) for x, y, s in zip(lons, lats, species)]
    logger.info("Loaded %d occurrence records (%d species) from %s", len(records), len(np.unique(species)), path)
    return records


def save_occurrences_csv(records: Sequence[OccurrenceRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lons, lats, species = records_to_arrays(records)
    pd.DataFrame({"lon": lons, "lat": lats, "species_id": species}).to_csv(
        path, index=False, float_format="%.17g"
    )
    return path


def cap_per_species(
    records: Sequence[OccurrenceRecord], cap: int, rng: np.random.Generator
) -> List[OccurrenceRecord]:
    """
    Keep at most `cap` records per species, chosen uniformly without replacement.

    Survivors keep their original relative order, so a second pass with the
    same cap is the identity.
    """
    if cap < 1:
        raise DataValidationError(f"cap must be >= 1, got {cap}")
    if not records:
        return []

    _, _, species = records_to_arrays(records)
    keep = np.ones(len(records), dtype=bool)
    capped = 0
    for s in np.unique(species):
        idx = np.flatnonzero(species == s)
        if idx.size > cap:
            chosen = rng.choice(idx, size=cap, replace=False)
            keep[idx] = False
            keep[chosen] = True
            capped += 1

    if capped:
        logger.info("Capped %d species at %d records (%d -> %d records)", capped, cap, len(records), int(keep.sum()))
    return [records[i] for i in np.flatnonzero(keep)]


# -------------------------------------------------------------------
# Evaluation (presence-absence) tables
# -------------------------------------------------------------------

def read_eval_tables(
    sites_path: Union[str, Path], labels_path: Union[str, Path], n_species: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Returns (site_ids, lons, lats, labels) with labels of shape (n_sites, n_species).
    """
    sites = _read_table(Path(sites_path), SITE_COLUMNS)
    site_ids = _integer_column(sites, "site_id", "site id")
    lons = _numeric_column(sites, "lon", "longitude")
    lats = _numeric_column(sites, "lat", "latitude")
    _check_range(lons, -180.0, 180.0, "longitude")
    _check_range(lats, -90.0, 90.0, "latitude")
    if len(np.unique(site_ids)) != len(site_ids):
        raise DataValidationError(f"duplicate site ids in {sites_path}")

    labels_df = _read_table(Path(labels_path), LABEL_COLUMNS)
    label_sites = _integer_column(labels_df, "site_id", "site id")
    label_species = _integer_column(labels_df, "species_id", "species id")
    label_values = _integer_column(labels_df, "label", "label")
    if np.any(label_values > 1):
        raise DataValidationError(f"labels must be 0 or 1 in {labels_path}")
    if np.any(label_species >= n_species):
        bad = int(np.flatnonzero(label_species >= n_species)[0])
        raise ShapeMismatchError(f"invalid species id at line {bad + 2} of {labels_path} (model predicts S={n_species})")

    row_of: Dict[int, int] = {int(site): row for row, site in enumerate(site_ids)}
    unknown = [int(s) for s in label_sites if int(s) not in row_of]
    if unknown:
        raise DataValidationError(f"labels reference unknown site id {unknown[0]}")

    labels = np.zeros((len(site_ids), n_species), dtype=np.int8)
    rows = np.fromiter((row_of[int(s)] for s in label_sites), dtype=np.int64, count=len(label_sites))
    labels[rows, label_species] = label_values.astype(np.int8)
    return site_ids, lons, lats, labels


def write_eval_tables(
    site_ids: np.ndarray,
    lons: np.ndarray,
    lats: np.ndarray,
    labels: np.ndarray,
    sites_path: Union[str, Path],
    labels_path: Union[str, Path],
) -> Tuple[Path, Path]:
    sites_path, labels_path = Path(sites_path), Path(labels_path)
    sites_path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"site_id": site_ids, "lon": lons, "lat": lats}).to_csv(
        sites_path, index=False, float_format="%.17g"
    )
    n_sites, n_species = labels.shape
    pd.DataFrame(
        {
            "site_id": np.repeat(site_ids, n_species),
            "species_id": np.tile(np.arange(n_species), n_sites),
            "label": labels.reshape(-1).astype(np.int64),
        }
    ).to_csv(labels_path, index=False)
    return sites_path, labels_path


# -------------------------------------------------------------------
# Geo-prior cases
# -------------------------------------------------------------------

@dataclass(frozen=True)
class GeoPriorCase:
    """One image: external classifier scores, its true species and where it was taken."""

    vision_scores: np.ndarray
    true_class: int
    location: Tuple[float, float]

    def __post_init__(self):
        scores = np.asarray(self.vision_scores, dtype=np.float64)
        if scores.ndim != 1 or not np.all(np.isfinite(scores)):
            raise DataValidationError("vision scores must be a finite vector")
        if not 0 <= self.true_class < scores.size:
            raise DataValidationError(f"true class {self.true_class} outside [0, {scores.size})")
        scores.setflags(write=False)
        object.__setattr__(self, "vision_scores", scores)


def load_geo_prior_cases(path: Union[str, Path]) -> List[GeoPriorCase]:
    path = Path(path)
    df = _read_table(path, ["lon", "lat", "true_class"])
    score_columns = [c for c in df.columns if c.startswith("score_")]
    if not score_columns:
        raise DataValidationError(f"{path.name}: no score_<k> columns")
    expected = [f"score_{k}" for k in range(len(score_columns))]
    if score_columns != expected:
        raise DataValidationError(f"{path.name}: score columns must be score_0..score_{len(score_columns) - 1} in order")

    lons = _numeric_column(df, "lon", "longitude")
    lats = _numeric_column(df, "lat", "latitude")
    true_class = _integer_column(df, "true_class", "true class")
    scores = np.column_stack([_numeric_column(df, c, c) for c in score_columns]) if len(df) else np.empty((0, 0))
    return [
        GeoPriorCase(vision_scores=scores[i], true_class=int(true_class[i]), location=(float(lons[i]), float(lats[i])))
        for i in range(len(df))
    ]


def save_geo_prior_cases(cases: Sequence[GeoPriorCase], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cases:
        raise DataValidationError("no geo-prior cases to write")
    n_classes = cases[0].vision_scores.size
    frame = pd.DataFrame(
        {
            "lon": [c.location[0] for c in cases],
            "lat": [c.location[1] for c in cases],
            "true_class": [c.true_class for c in cases],
        }
    )
    scores = pd.DataFrame(
        np.vstack([c.vision_scores for c in cases]), columns=[f"score_{k}" for k in range(n_classes)]
    )
    pd.concat([frame, scores], axis=1).to_csv(path, index=False, float_format="%.17g")
    return path
