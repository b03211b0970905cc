"""
Synthetic world generator with known ground truth.

Builds a smooth environmental raster, one Gaussian niche per species in
feature space, long-tailed presence-only records drawn from those niches,
presence-absence evaluation sites, and geo-prior benchmark cases.
Everything is a deterministic function of the config and its seed.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.data_collection.env_grid import EnvGrid, save_grid_csv
from src.data_collection.occurrences import (
    GeoPriorCase,
    OccurrenceRecord,
    save_geo_prior_cases,
    save_occurrences_csv,
)
from src.models.location_encoding import LocationEncoderConfig
from src.preprocessing.dataset import EvalSet, build_eval_set, constant_columns, save_eval_set
from src.utils.errors import DataValidationError

logger = logging.getLogger(__name__)

N_WAVES = 8
WAVE_FREQUENCY_RANGE = (0.5, 2.5)  # cycles across the grid extent
MIN_SUITABILITY = 1e-12
EVAL_LABEL_RETRIES = 10
VISION_NOISE_MAX = 0.3
CORRUPTED_TRUE_SCORE = 0.9

WORLD_FILES = {
    "occurrences": "occurrences.csv",
    "grid": "grid.csv",
    "eval_sites": "eval_sites.csv",
    "eval_labels": "eval_labels.csv",
    "geo_prior_cases": "geo_prior_cases.csv",
    "manifest": "manifest.json",
}


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_species: int = Field(200, ge=2)
    width: int = Field(64, ge=1)
    height: int = Field(48, ge=1)
    n_features: int = Field(4, ge=1)
    bounds: Tuple[float, float, float, float] = (-10.0, 30.0, 35.0, 60.0)
    total_observations: int = Field(20000, ge=2)
    tail_exponent: float = Field(1.3, gt=0)
    count_profile: Literal["longtail", "uniform"] = "longtail"
    niche_width_range: Tuple[float, float] = (0.75, 2.0)
    eval_sites: int = Field(500, ge=1)
    geo_prior_cases: int = Field(2000, ge=0)
    geo_prior_corruption: float = Field(0.3, ge=0.0, le=1.0)
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check_consistency(self):
        if self.total_observations < self.n_species:
            raise ValueError("total_observations must be >= n_species (every species needs a record)")
        low, high = self.niche_width_range
        if not 0 < low <= high:
            raise ValueError("niche_width_range must satisfy 0 < sigma_min <= sigma_max")
        if self.width * self.height < 2:
            raise ValueError("grid needs at least two cells to standardise feature channels")
        lon_min, lon_max, lat_min, lat_max = self.bounds
        if not (-180 <= lon_min < lon_max <= 180 and -90 <= lat_min < lat_max <= 90):
            raise ValueError(f"invalid bounds {self.bounds}")
        return self

    @property
    def effective_exponent(self) -> float:
        return 0.0 if self.count_profile == "uniform" else self.tail_exponent


@dataclass(frozen=True)
class NicheModel:
    """Gaussian response in feature space: exp(-||x - center||^2 / (2 width^2))."""

    center: np.ndarray
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise DataValidationError(f"niche width must be positive, got {self.width}")
        center = np.array(self.center, dtype=np.float64)
        center.setflags(write=False)
        object.__setattr__(self, "center", center)

    def suitability(self, features: np.ndarray) -> np.ndarray:
        diff = np.atleast_2d(features) - self.center
        return np.exp(-np.sum(diff * diff, axis=1) / (2.0 * self.width**2))


def suitability_matrix(niches: Sequence[NicheModel], features: np.ndarray) -> np.ndarray:
    """(n_rows, S) ground-truth suitabilities."""
    return np.column_stack([n.suitability(features) for n in niches])


# -------------------------------------------------------------------
# Environment
# -------------------------------------------------------------------

def generate_env_grid(config: SynthConfig, rng: np.random.Generator) -> EnvGrid:
    """Each channel: sum of N_WAVES random low-frequency cosines, standardised."""
    u = (np.arange(config.width) + 0.5) / config.width
    v = (np.arange(config.height) + 0.5) / config.height
    uu, vv = np.meshgrid(u, v)  # (height, width)

    channels = []
    for f in range(config.n_features):
        channel = np.zeros_like(uu)
        for _ in range(N_WAVES):
            freq = rng.uniform(*WAVE_FREQUENCY_RANGE)
            angle = rng.uniform(0.0, 2.0 * np.pi)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            amplitude = rng.uniform(0.5, 1.5)
            kx, ky = freq * np.cos(angle), freq * np.sin(angle)
            channel += amplitude * np.cos(2.0 * np.pi * (kx * uu + ky * vv) + phase)
        std = channel.std()
        if std < 1e-12:
            raise DataValidationError(f"feature channel {f} came out constant")
        channels.append((channel - channel.mean()) / std)

    features = np.stack(channels, axis=-1)
    return EnvGrid(width=config.width, height=config.height, bounds=config.bounds, features=features)


def generate_niches(config: SynthConfig, grid: EnvGrid, rng: np.random.Generator) -> List[NicheModel]:
    """Centres sit on the features of a random cell, so every niche exists somewhere in the world."""
    cells = rng.integers(0, grid.n_cells, size=config.n_species)
    widths = rng.uniform(*config.niche_width_range, size=config.n_species)
    centers = grid.flat_features[cells]
    return [NicheModel(center=c, width=float(w)) for c, w in zip(centers, widths)]


# -------------------------------------------------------------------
# Presence records
# -------------------------------------------------------------------

def draw_longtail_counts(n_species: int, total: int, exponent: float) -> np.ndarray:
    """
    Counts proportional to rank^(-exponent), summing exactly to `total`.

    Largest-remainder rounding, then any zero is lifted to 1 at the expense
    of the largest counts. Species s has rank s + 1, so counts are descending.
    """
    if n_species < 1 or total < n_species:
        raise DataValidationError(f"need total >= n_species >= 1, got total={total}, n_species={n_species}")
    if exponent < 0:
        raise DataValidationError(f"tail exponent must be >= 0, got {exponent}")

    ranks = np.arange(1, n_species + 1, dtype=np.float64)
    weights = ranks ** (-exponent)
    quotas = total * weights / weights.sum()
    counts = np.floor(quotas).astype(np.int64)
    shortfall = int(total - counts.sum())
    if shortfall > 0:
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:shortfall]] += 1

    for s in np.flatnonzero(counts == 0):
        donor = int(np.argmax(counts))
        counts[donor] -= 1
        counts[s] = 1

    return np.sort(counts)[::-1].copy()


def sample_presences(
    niches: Sequence[NicheModel], grid: EnvGrid, counts: Sequence[int], rng: np.random.Generator
) -> List[OccurrenceRecord]:
    """Cells drawn proportionally to true suitability, one jittered point per draw."""
    if len(counts) != len(niches):
        raise DataValidationError(f"{len(counts)} counts for {len(niches)} niches")

    cell_features = grid.flat_features
    records: List[OccurrenceRecord] = []
    for species, (niche, count) in enumerate(zip(niches, counts)):
        if count < 1:
            raise DataValidationError(f"species {species} needs at least one record, got {count}")
        suit = niche.suitability(cell_features)
        if suit.max() < MIN_SUITABILITY:
            raise DataValidationError(f"species {species} has ~0 suitability everywhere on the grid")
        cells = rng.choice(grid.n_cells, size=int(count), p=suit / suit.sum())
        lons, lats = grid.jitter_in_cells(cells, rng)
        records.extend(OccurrenceRecord(float(x), float(y), species) for x, y in zip(lons, lats))
    return records


# -------------------------------------------------------------------
# Evaluation data
# -------------------------------------------------------------------

def generate_eval_set(
    niches: Sequence[NicheModel],
    grid: EnvGrid,
    n_sites: int,
    rng: np.random.Generator,
    encoder: Optional[LocationEncoderConfig] = None,
) -> EvalSet:
    """Uniform sites with Bernoulli(true suitability) labels."""
    if n_sites < 1:
        raise DataValidationError("need at least 1 eval site")

    cells = rng.integers(0, grid.n_cells, size=n_sites)
    lons, lats = grid.jitter_in_cells(cells, rng)
    suit = suitability_matrix(niches, grid.flat_features[cells])
    labels = (rng.random(suit.shape) < suit).astype(np.int8)

    for species in constant_columns(labels):
        for _ in range(EVAL_LABEL_RETRIES):
            labels[:, species] = rng.random(n_sites) < suit[:, species]
            if 0 < labels[:, species].sum() < n_sites:
                break

    return build_eval_set(np.arange(n_sites), lons, lats, labels, grid, encoder)


def generate_geo_prior_cases(
    niches: Sequence[NicheModel],
    grid: EnvGrid,
    n_cases: int,
    corruption_rate: float,
    rng: np.random.Generator,
) -> List[GeoPriorCase]:
    """
    Images of uniformly drawn species, photographed inside their niche.

    The simulated classifier ranks the true class first, except in a
    `corruption_rate` share of cases where a random rival wins and the true
    class comes second with 0.9 of the rival's score.
    """
    n_species = len(niches)
    cell_probs: Dict[int, np.ndarray] = {}
    cases: List[GeoPriorCase] = []
    for _ in range(n_cases):
        true_class = int(rng.integers(0, n_species))
        if true_class not in cell_probs:
            suit = niches[true_class].suitability(grid.flat_features)
            cell_probs[true_class] = suit / suit.sum()
        cell = rng.choice(grid.n_cells, p=cell_probs[true_class])
        lon, lat = grid.jitter_in_cells(np.array([cell]), rng)

        scores = rng.uniform(0.0, VISION_NOISE_MAX, size=n_species)
        scores[true_class] = 1.0
        if rng.random() < corruption_rate:
            rival = int(rng.integers(0, n_species - 1))
            rival += rival >= true_class
            scores[rival] = 1.0
            scores[true_class] = CORRUPTED_TRUE_SCORE
        cases.append(GeoPriorCase(vision_scores=scores, true_class=true_class, location=(float(lon[0]), float(lat[0]))))
    return cases


# -------------------------------------------------------------------
# Whole world
# -------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticWorld:
    config: SynthConfig
    grid: EnvGrid
    niches: List[NicheModel]
    counts: np.ndarray
    records: List[OccurrenceRecord]
    eval_set: EvalSet
    geo_prior_cases: List[GeoPriorCase]


def generate_world(config: SynthConfig, encoder: Optional[LocationEncoderConfig] = None) -> SyntheticWorld:
    rng = np.random.default_rng(config.seed)
    logger.info("[SYNTH] Generating world: S=%d, %dx%d grid, F=%d, seed=%d",
                config.n_species, config.width, config.height, config.n_features, config.seed)

    grid = generate_env_grid(config, rng)
    niches = generate_niches(config, grid, rng)
    counts = draw_longtail_counts(config.n_species, config.total_observations, config.effective_exponent)
    records = sample_presences(niches, grid, counts, rng)
    eval_set = generate_eval_set(niches, grid, config.eval_sites, rng, encoder)
    cases = generate_geo_prior_cases(niches, grid, config.geo_prior_cases, config.geo_prior_corruption, rng)

    logger.info("[SYNTH] %d records, counts %d..%d, %d eval sites (%d species excluded), %d geo-prior cases",
                len(records), counts.min(), counts.max(), eval_set.n_sites, len(eval_set.excluded), len(cases))
    return SyntheticWorld(config, grid, niches, counts, records, eval_set, cases)


def write_world(world: SyntheticWorld, output_dir: Union[str, Path]) -> Dict[str, Path]:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = {key: output_dir / name for key, name in WORLD_FILES.items()}

    save_occurrences_csv(world.records, paths["occurrences"])
    save_grid_csv(world.grid, paths["grid"])
    save_eval_set(world.eval_set, paths["eval_sites"], paths["eval_labels"])
    if world.geo_prior_cases:
        save_geo_prior_cases(world.geo_prior_cases, paths["geo_prior_cases"])
    else:
        paths.pop("geo_prior_cases")

    manifest = {
        "generator": "synthetic_world",
        "stand_in": True,
        "notes": [
            "Environment channels are sums of random low-frequency cosines, standardised per channel.",
            "Species niches are isotropic Gaussians in feature space centred on a random cell's features.",
            "Presence counts follow rank^(-exponent) with largest-remainder rounding.",
            "Evaluation labels are Bernoulli draws of the true suitability at uniform sites.",
            "Geo-prior vision scores are simulated; the true class is corrupted to rank 2nd at the configured rate.",
            "No real taxonomic or observer bias is modelled.",
        ],
        "config": world.config.model_dump(mode="json"),
        "seed": world.config.seed,
        "n_records": len(world.records),
        "counts": {
            "min": int(world.counts.min()),
            "max": int(world.counts.max()),
            "median": float(np.median(world.counts)),
        },
        "excluded_eval_species": list(world.eval_set.excluded),
        "files": {key: path.name for key, path in paths.items() if key != "manifest"},
    }
    paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.info("[SYNTH] Wrote world to %s", output_dir)
    return paths
