"""
Turn raw records into model-ready arrays.

- SpeciesCatalog : presence counts n_p(s), n, and weights w_s = n / n_p(s)
- TrainingSet    : single-positive samples (feature rows + one positive species each)
- EvalSet        : presence-absence sites with ground-truth labels
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.data_collection.env_grid import EnvGrid, extract_features_batch
from src.data_collection.occurrences import (
    OccurrenceRecord,
    read_eval_tables,
    records_to_arrays,
    write_eval_tables,
)
from src.models.location_encoding import LocationEncoderConfig, encode_locations, encoder_dim
from src.utils.errors import DataValidationError

logger = logging.getLogger(__name__)


def _frozen(array, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype)
    out.setflags(write=False)
    return out


# ============================================================================
# SPECIES CATALOG
# ============================================================================

@dataclass(frozen=True)
class SpeciesCatalog:
    counts: np.ndarray
    n: int
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        counts = _frozen(self.counts, np.int64)
        if counts.ndim != 1 or counts.size < 1:
            raise DataValidationError("catalog needs at least one species")
        if np.any(counts < 1):
            raise DataValidationError("every species needs n_p(s) >= 1")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "weights", _frozen(self.n / counts, np.float64))

    @property
    def n_species(self) -> int:
        return self.counts.size

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.n

    @property
    def singular_species(self) -> List[int]:
        """Species with n_p(s) = n, for which 1 / (1 - 1/w_s) is undefined."""
        return [int(s) for s in np.flatnonzero(self.counts >= self.n)]

    @property
    def full_weighted_eligible(self) -> bool:
        return not self.singular_species

    def rare_species(self, threshold: int) -> np.ndarray:
        return np.flatnonzero(self.counts <= threshold)


def build_catalog(records: Sequence[OccurrenceRecord], n_species: int) -> SpeciesCatalog:
    _, _, species = records_to_arrays(records)
    if np.any(species >= n_species):
        bad = int(species[species >= n_species][0])
        raise DataValidationError(f"species id {bad} not in [0, {n_species})")

    counts = np.bincount(species, minlength=n_species)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        shown = ", ".join(str(int(s)) for s in missing[:20])
        more = f" ... ({missing.size} total)" if missing.size > 20 else ""
        raise DataValidationError(f"species without presence records (weight undefined): {shown}{more}")

    catalog = SpeciesCatalog(counts=counts, n=len(records))
    if not catalog.full_weighted_eligible:
        logger.warning("Species %s hold every record; the full weighted loss cannot be used", catalog.singular_species)
    return catalog


def group_by_frequency(catalog: SpeciesCatalog, edges: Sequence[int]) -> Dict[str, List[int]]:
    """
    Bucket species by training presence count.

    With edges [e0, e1, ...] the buckets are "<=e0", "(e0,e1]", ..., ">e_last";
    a species goes to the first bucket whose upper edge is >= its count.
    """
    edges = list(edges)
    if not edges:
        raise DataValidationError("need at least one bucket edge")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise DataValidationError(f"bucket edges must be strictly ascending, got {edges}")

    labels = bucket_labels(edges)
    buckets: Dict[str, List[int]] = {label: [] for label in labels}
    positions = np.searchsorted(np.asarray(edges), catalog.counts, side="left")
    for species, pos in enumerate(positions):
        buckets[labels[pos]].append(species)
    return buckets


def bucket_labels(edges: Sequence[int]) -> List[str]:
    labels = [f"<={edges[0]}"]
    labels += [f"({lo},{hi}]" for lo, hi in zip(edges, edges[1:])]
    labels.append(f">{edges[-1]}")
    return labels


# ============================================================================
# TRAINING SAMPLES
# ============================================================================

@dataclass(frozen=True)
class TrainSample:
    features: np.ndarray
    positive: int


@dataclass(frozen=True)
class TrainingSet:
    """Rows of encoded features, each with one observed (positive) species."""

    features: np.ndarray
    positives: np.ndarray
    n_species: int

    def __post_init__(self):
        features = _frozen(self.features, np.float64)
        positives = _frozen(self.positives, np.int64)
        if features.ndim != 2 or features.shape[0] != positives.shape[0]:
            raise DataValidationError(
                f"features {features.shape} and positives {positives.shape} disagree on the sample count"
            )
        if not np.all(np.isfinite(features)):
            raise DataValidationError("training features contain non-finite values")
        if positives.size and (positives.min() < 0 or positives.max() >= self.n_species):
            raise DataValidationError(f"positive species index outside [0, {self.n_species})")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "positives", positives)

    def __len__(self) -> int:
        return self.positives.shape[0]

    def __getitem__(self, index: int) -> TrainSample:
        return TrainSample(features=self.features[index], positive=int(self.positives[index]))

    def __iter__(self) -> Iterator[TrainSample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def take(self, indices) -> "TrainingSet":
        indices = np.asarray(indices, dtype=np.int64)
        return TrainingSet(self.features[indices], self.positives[indices], self.n_species)


def assemble_features(
    grid: EnvGrid, lons, lats, encoder: Optional[LocationEncoderConfig]
) -> np.ndarray:
    """Location encoding (if enabled) followed by the environmental features."""
    env = extract_features_batch(grid, lons, lats)
    if encoder is None:
        return env
    return np.hstack([encode_locations(lons, lats), env])


def assemble_dataset(
    records: Sequence[OccurrenceRecord],
    grid: EnvGrid,
    encoder: Optional[LocationEncoderConfig],
    n_species: int,
) -> Tuple[TrainingSet, SpeciesCatalog]:
    """One single-positive sample per record, plus the catalog of the same records."""
    lons, lats, species = records_to_arrays(records)
    if len(records):
        features = assemble_features(grid, lons, lats, encoder)
    else:
        features = np.empty((0, encoder_dim(encoder) + grid.n_features))
    catalog = build_catalog(records, n_species)
    dataset = TrainingSet(features=features, positives=species, n_species=n_species)
    logger.info(
        "Assembled %d samples with D=%d (%s location encoding), S=%d",
        len(dataset),
        dataset.input_dim,
        "with" if encoder is not None else "no",
        n_species,
    )
    return dataset, catalog


# ============================================================================
# EVALUATION SET
# ============================================================================

@dataclass(frozen=True)
class EvalSet:
    """
    Presence-absence sites. Species whose label column is constant have an
    undefined AUC; they stay in `labels` (columns align with model outputs)
    and are listed in `excluded`.
    """

    site_ids: np.ndarray
    lons: np.ndarray
    lats: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    excluded: Tuple[int, ...] = ()

    def __post_init__(self):
        for name, dtype in (("site_ids", np.int64), ("lons", np.float64), ("lats", np.float64),
                            ("features", np.float64), ("labels", np.int8)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))
        n_sites = self.site_ids.shape[0]
        if self.labels.ndim != 2 or self.labels.shape[0] != n_sites or self.features.shape[0] != n_sites:
            raise DataValidationError("eval set arrays disagree on the number of sites")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise DataValidationError("eval labels must be binary")
        object.__setattr__(self, "excluded", tuple(sorted(set(int(s) for s in self.excluded))))

    @property
    def n_sites(self) -> int:
        return self.site_ids.shape[0]

    @property
    def n_species(self) -> int:
        return self.labels.shape[1]

    @property
    def sites(self) -> np.ndarray:
        return self.features

    @property
    def included(self) -> np.ndarray:
        mask = np.ones(self.n_species, dtype=bool)
        mask[list(self.excluded)] = False
        return np.flatnonzero(mask)


def constant_columns(labels: np.ndarray) -> List[int]:
    positives = labels.sum(axis=0)
    return [int(s) for s in np.flatnonzero((positives == 0) | (positives == labels.shape[0]))]


def build_eval_set(
    site_ids, lons, lats, labels, grid: EnvGrid, encoder: Optional[LocationEncoderConfig],
    excluded: Sequence[int] = (),
) -> EvalSet:
    features = assemble_features(grid, lons, lats, encoder)
    excluded = sorted(set(excluded) | set(constant_columns(np.asarray(labels))))
    if excluded:
        logger.warning("[EVAL] %d species have constant labels and are excluded: %s", len(excluded), excluded[:20])
    return EvalSet(site_ids=site_ids, lons=lons, lats=lats, features=features, labels=labels, excluded=tuple(excluded))


def load_eval_set(
    sites_path: Union[str, Path],
    labels_path: Union[str, Path],
    grid: EnvGrid,
    encoder: Optional[LocationEncoderConfig],
    n_species: int,
) -> EvalSet:
    site_ids, lons, lats, labels = read_eval_tables(sites_path, labels_path, n_species)
    if site_ids.size == 0:
        raise DataValidationError(f"no sites in {sites_path}")
    eval_set = build_eval_set(site_ids, lons, lats, labels, grid, encoder)
    logger.info("Loaded eval set: %d sites, %d species (%d excluded)", eval_set.n_sites, n_species, len(eval_set.excluded))
    return eval_set


def save_eval_set(eval_set: EvalSet, sites_path: Union[str, Path], labels_path: Union[str, Path]):
    return write_eval_tables(
        eval_set.site_ids, eval_set.lons, eval_set.lats, eval_set.labels, sites_path, labels_path
    )
