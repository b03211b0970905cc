"""
Central configuration for the species distribution modeling runs.

Includes:
- Environment overrides (.env)
- Paths
- Presets (rare-species thresholds, loss settings, lambda1 values, frequency buckets)
- RunConfig, the single file that drives every CLI subcommand
"""

import json
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.data_collection.synthetic_world import WORLD_FILES, SynthConfig
from src.models.location_encoding import LocationEncoderConfig
from src.models.losses import LossConfig
from src.models.mlp import MlpArchitecture
from src.models.training import TrainConfig
from src.utils.errors import DataValidationError
from src.utils.seeding import derive_seed

# -------------------------------------------------------------------
# Load environment variables
# -------------------------------------------------------------------

load_dotenv()

OUTPUT_DIR_ENV = "SDM_OUTPUT_DIR"
LOG_LEVEL_ENV = "SDM_LOG_LEVEL"

# -------------------------------------------------------------------
# Project paths
# -------------------------------------------------------------------

BASE_DIR = Path(__file__).resolve().parents[2]
CONFIGS_DIR = BASE_DIR / "configs"
DEFAULT_OUTPUT_DIR = Path("outputs")

RUNS_SUBDIR = "runs"
EVAL_REPORT_FILE = "eval_report.csv"
EVAL_SUMMARY_FILE = "eval_summary.json"
COMPARISON_FILE = "comparison.csv"
RUN_CONFIG_FILE = "run_config.json"

# -------------------------------------------------------------------
# Presets
# -------------------------------------------------------------------

# training-count threshold at or below which a species counts as rare
RARE_THRESHOLDS: Dict[str, int] = {
    "glc23": 50,
    "snt": 999,
    "iucn": 100,
}

# lambda1 is not part of a loss preset; it stays as configured (see LAMBDA1_PRESETS)
LOSS_PRESETS: Dict[str, Dict[str, Any]] = {
    "bce": {"kind": "bce"},
    "full": {"kind": "full", "lambda": 2048.0},
    "full_weighted_l2_0.5": {"kind": "full_weighted", "lambda2": 0.5},
    "full_weighted_l2_0.8": {"kind": "full_weighted", "lambda2": 0.8},
}

# weights grow with the number of species, so large taxonomies use a smaller lambda1;
# lambda1 * S stays within a few multiples of the full loss's lambda = 2048
# (glc23 ~10k species, inat ~47k, the synthetic desk world 200)
LAMBDA1_PRESETS: Dict[str, float] = {
    "glc23": 1.0,
    "inat": 0.1,
    "desk": 10.0,
}

DEFAULT_BUCKET_EDGES: List[int] = [25, 50, 100, 250, 500, 1000]

# -------------------------------------------------------------------
# Helper functions
# -------------------------------------------------------------------

def get_loss_preset(name: str) -> LossConfig:
    if name not in LOSS_PRESETS:
        raise DataValidationError(f"unknown loss preset '{name}' (known: {', '.join(LOSS_PRESETS)})")
    return LossConfig.model_validate(LOSS_PRESETS[name])


def get_all_loss_presets() -> List[str]:
    return list(LOSS_PRESETS)


def get_lambda1_preset(name: str) -> float:
    if name not in LAMBDA1_PRESETS:
        raise DataValidationError(f"unknown lambda1 preset '{name}' (known: {', '.join(LAMBDA1_PRESETS)})")
    return LAMBDA1_PRESETS[name]


def get_rare_threshold(preset: str) -> int:
    if preset not in RARE_THRESHOLDS:
        raise DataValidationError(f"unknown rare-species preset '{preset}' (known: {', '.join(RARE_THRESHOLDS)})")
    return RARE_THRESHOLDS[preset]


# -------------------------------------------------------------------
# Run configuration
# -------------------------------------------------------------------

class PathsConfig(BaseModel):
    """Unset inputs resolve to the synthetic-world file names inside output_dir."""

    model_config = ConfigDict(extra="forbid")

    output_dir: Path = DEFAULT_OUTPUT_DIR
    occurrences: Optional[Path] = None
    grid: Optional[Path] = None
    eval_sites: Optional[Path] = None
    eval_labels: Optional[Path] = None
    geo_prior_cases: Optional[Path] = None

    def resolve(self, name: str) -> Path:
        explicit = getattr(self, name)
        return explicit if explicit is not None else self.output_dir / WORLD_FILES[name]

    @property
    def runs_dir(self) -> Path:
        return self.output_dir / RUNS_SUBDIR


class MetricsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rare_threshold: int = Field(RARE_THRESHOLDS["glc23"], ge=1)
    rare_preset: Optional[str] = None
    bucket_edges: List[int] = Field(default_factory=lambda: list(DEFAULT_BUCKET_EDGES))
    n_jobs: int = 1

    @field_validator("bucket_edges")
    @classmethod
    def _ascending(cls, edges: List[int]) -> List[int]:
        if not edges or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("bucket_edges must be a non-empty strictly ascending list")
        return edges

    @field_validator("rare_preset")
    @classmethod
    def _known_preset(cls, preset: Optional[str]) -> Optional[str]:
        if preset is not None and preset not in RARE_THRESHOLDS:
            raise ValueError(f"unknown rare preset '{preset}' (known: {', '.join(RARE_THRESHOLDS)})")
        return preset

    @property
    def effective_rare_threshold(self) -> int:
        return RARE_THRESHOLDS[self.rare_preset] if self.rare_preset else self.rare_threshold


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(0, ge=0)
    n_species: Optional[int] = Field(None, ge=1)
    location_encoding: bool = True
    observation_cap: Optional[int] = Field(None, ge=1)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    model: MlpArchitecture = Field(default_factory=MlpArchitecture.desk)
    train: TrainConfig = Field(default_factory=TrainConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)

    @model_validator(mode="after")
    def _propagate_seed(self):
        # the global seed drives every section that does not pin its own
        if "seed" not in self.synth.model_fields_set:
            self.synth = self.synth.model_copy(update={"seed": derive_seed(self.seed, "synth")})
        if "seed" not in self.train.model_fields_set:
            self.train = self.train.model_copy(update={"seed": self.seed})
        return self

    @property
    def encoder(self) -> Optional[LocationEncoderConfig]:
        return LocationEncoderConfig() if self.location_encoding else None

    def with_loss(self, loss: LossConfig) -> "RunConfig":
        return self.model_copy(update={"train": self.train.model_copy(update={"loss": loss})})

    def with_loss_preset(self, name: str) -> "RunConfig":
        """Kind and lambda / lambda2 from the preset; the configured lambda1 is kept."""
        get_loss_preset(name)
        loss = LossConfig.model_validate({"lambda1": self.train.loss.lambda1, **LOSS_PRESETS[name]})
        return self.with_loss(loss)

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True, indent=2)


def _set_dotted(target: Dict[str, Any], dotted: str, value: Any) -> None:
    node = target
    keys = dotted.split(".")
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise DataValidationError(f"cannot override '{dotted}': '{key}' is not a section")
    node[keys[-1]] = value


def load_run_config(
    path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, Any]] = None
) -> RunConfig:
    """
    Read a RunConfig JSON file (or start from defaults) and apply overrides.

    Precedence: dotted-key overrides (CLI flags), then SDM_OUTPUT_DIR for the
    output directory, then the file, then defaults.
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise DataValidationError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise DataValidationError(f"config file {path} must hold a JSON object")

    overrides = dict(overrides or {})
    env_output = os.getenv(OUTPUT_DIR_ENV)
    if env_output and "paths.output_dir" not in overrides:
        overrides["paths.output_dir"] = env_output
    for key, value in overrides.items():
        if value is not None:
            _set_dotted(raw, key, value)
    return RunConfig.model_validate(raw)
