"""
File-level orchestration: each function reads its inputs from the paths in a
RunConfig, calls the library and writes its outputs next to them.

    output_dir/
        occurrences.csv grid.csv eval_sites.csv eval_labels.csv geo_prior_cases.csv manifest.json
        runs/<run_name>/
            checkpoint.bin history.csv timings.csv run_config.json
            eval_report.csv eval_summary.json
        comparison.csv
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd

from src.data_collection.env_grid import EnvGrid, load_grid_csv
from src.data_collection.occurrences import (
    OccurrenceRecord,
    cap_per_species,
    load_geo_prior_cases,
    load_occurrences_csv,
)
from src.data_collection.synthetic_world import generate_world, write_world
from src.evaluation.metrics import GeoPriorReport, compare_summaries, evaluate, geo_prior_gain
from src.models.checkpoint import check_compatible, load_checkpoint
from src.models.location_encoding import LocationEncoderConfig
from src.models.mlp import Parameters
from src.models.training import FINAL_CHECKPOINT, TrainHistory, train
from src.preprocessing.dataset import SpeciesCatalog, TrainingSet, assemble_dataset, load_eval_set
from src.utils.config import (
    COMPARISON_FILE,
    EVAL_REPORT_FILE,
    EVAL_SUMMARY_FILE,
    RUN_CONFIG_FILE,
    RunConfig,
)
from src.utils.errors import DataValidationError, ShapeMismatchError
from src.utils.seeding import make_rng

logger = logging.getLogger(__name__)


# -------------------------------------------------------------------
# Data
# -------------------------------------------------------------------

@dataclass
class TrainingData:
    grid: EnvGrid
    records: List[OccurrenceRecord]
    dataset: TrainingSet
    catalog: SpeciesCatalog
    encoder: Optional[LocationEncoderConfig]


def run_synth_generate(config: RunConfig) -> Dict[str, Path]:
    world = generate_world(config.synth, config.encoder)
    return write_world(world, config.paths.output_dir)


def load_training_data(config: RunConfig, encoder: Optional[LocationEncoderConfig] = None) -> TrainingData:
    """Grid + occurrences -> capped records -> dataset and catalog. Deterministic in the config."""
    encoder = config.encoder if encoder is None else encoder
    grid = load_grid_csv(config.paths.resolve("grid"))
    records = load_occurrences_csv(config.paths.resolve("occurrences"))
    if config.observation_cap is not None:
        records = cap_per_species(records, config.observation_cap, make_rng(config.seed, "cap"))
    if not records:
        raise DataValidationError("no occurrence records to train on")

    n_species = config.n_species
    if n_species is None:
        n_species = max(r.species_id for r in records) + 1
    dataset, catalog = assemble_dataset(records, grid, encoder, n_species)
    return TrainingData(grid, records, dataset, catalog, encoder)


# -------------------------------------------------------------------
# Train
# -------------------------------------------------------------------

@dataclass
class TrainOutcome:
    params: Parameters
    history: TrainHistory
    run_dir: Path

    @property
    def checkpoint(self) -> Path:
        return self.run_dir / FINAL_CHECKPOINT


def run_train(config: RunConfig, run_name: Optional[str] = None) -> TrainOutcome:
    run_name = run_name or config.train.loss.label()
    run_dir = config.paths.runs_dir / run_name
    data = load_training_data(config)
    model_config = config.model.for_data(data.dataset.input_dim, data.catalog.n_species)

    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / RUN_CONFIG_FILE).write_text(config.to_json())
    params, history = train(
        data.dataset,
        data.catalog,
        data.grid,
        model_config,
        config.train,
        encoder=data.encoder,
        output_dir=run_dir,
        metadata={"run": run_name},
    )
    return TrainOutcome(params, history, run_dir)


# -------------------------------------------------------------------
# Evaluate
# -------------------------------------------------------------------

def _encoder_from_metadata(metadata: Dict[str, Any], config: RunConfig) -> Optional[LocationEncoderConfig]:
    if "location_encoding" not in metadata:
        return config.encoder
    kind = metadata["location_encoding"]
    if (kind is not None) != config.location_encoding:
        logger.warning("Checkpoint was trained %s location encoding; following the checkpoint",
                       "with" if kind else "without")
    return LocationEncoderConfig(kind) if kind is not None else None


def _read_summary(path: Path) -> Dict[str, Any]:
    return json.loads(path.read_text()) if path.exists() else {}


def _write_summary(path: Path, summary: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    return path


def run_evaluate(config: RunConfig, checkpoint: Union[str, Path]) -> Dict[str, Any]:
    """Writes eval_report.csv and eval_summary.json next to the checkpoint; returns the summary."""
    checkpoint = Path(checkpoint)
    params, metadata = load_checkpoint(checkpoint)
    encoder = _encoder_from_metadata(metadata, config)
    n_species = params.config.output_dim
    if config.n_species is not None and config.n_species != n_species:
        raise ShapeMismatchError(f"config says S={config.n_species}, checkpoint predicts S={n_species}")

    data = load_training_data(config.model_copy(update={"n_species": n_species}), encoder)
    check_compatible(params, data.dataset.input_dim, data.catalog.n_species)
    eval_set = load_eval_set(
        config.paths.resolve("eval_sites"), config.paths.resolve("eval_labels"), data.grid, encoder, n_species
    )
    reports = evaluate(
        params,
        eval_set,
        data.catalog,
        config.metrics.effective_rare_threshold,
        config.metrics.bucket_edges,
        n_jobs=config.metrics.n_jobs,
    )

    run_dir = checkpoint.parent
    pd.concat([report.to_frame() for report in reports.values()], ignore_index=True).to_csv(
        run_dir / EVAL_REPORT_FILE, index=False, float_format="%.17g"
    )
    summary_path = run_dir / EVAL_SUMMARY_FILE
    summary = _read_summary(summary_path)
    summary.update(
        {
            "run": metadata.get("run", run_dir.name),
            "loss": _loss_label(metadata, run_dir.name),
            "checkpoint": checkpoint.name,
            "n_sites": eval_set.n_sites,
            **{metric: report.to_summary() for metric, report in reports.items()},
        }
    )
    _write_summary(summary_path, summary)
    return summary


def _loss_label(metadata: Dict[str, Any], fallback: str) -> str:
    loss = metadata.get("loss")
    if not isinstance(loss, dict):
        return fallback
    if loss.get("kind") == "full_weighted":
        return f"full_weighted_l2_{loss.get('lambda2'):g}"
    return loss.get("kind", fallback)


def run_geo_prior(config: RunConfig, checkpoint: Union[str, Path]) -> GeoPriorReport:
    """Adds a geo_prior section to the run's eval_summary.json."""
    checkpoint = Path(checkpoint)
    params, metadata = load_checkpoint(checkpoint)
    encoder = _encoder_from_metadata(metadata, config)
    grid = load_grid_csv(config.paths.resolve("grid"))
    cases = load_geo_prior_cases(config.paths.resolve("geo_prior_cases"))
    report = geo_prior_gain(params, cases, grid, encoder)

    summary_path = checkpoint.parent / EVAL_SUMMARY_FILE
    summary = _read_summary(summary_path)
    summary.setdefault("run", metadata.get("run", checkpoint.parent.name))
    summary.setdefault("loss", _loss_label(metadata, checkpoint.parent.name))
    summary["geo_prior"] = report.to_summary()
    _write_summary(summary_path, summary)
    return report


# -------------------------------------------------------------------
# Report / full pipeline
# -------------------------------------------------------------------

def run_report(config: RunConfig, summary_paths: Optional[Sequence[Union[str, Path]]] = None) -> pd.DataFrame:
    if summary_paths:
        paths = [Path(p) for p in summary_paths]
    else:
        paths = sorted(config.paths.runs_dir.glob(f"*/{EVAL_SUMMARY_FILE}"))
    if not paths:
        raise DataValidationError(f"no evaluation summaries found under {config.paths.runs_dir}")

    summaries: Dict[str, Dict[str, Any]] = {}
    for path in paths:
        if not path.exists():
            raise DataValidationError(f"summary not found: {path}")
        summary = json.loads(path.read_text())
        summaries[summary.get("run", path.parent.name)] = summary

    table = compare_summaries(summaries)
    out = config.paths.output_dir / COMPARISON_FILE
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out, index=False, float_format="%.6f")
    logger.info("Comparison of %d runs written to %s", len(table), out)
    return table


def run_pipeline(config: RunConfig, loss_presets: Sequence[str]) -> pd.DataFrame:
    """generate -> train each preset -> evaluate -> geo-prior -> report."""
    paths = run_synth_generate(config)
    summaries = []
    for preset in loss_presets:
        run_config = config.with_loss_preset(preset)
        outcome = run_train(run_config, run_name=preset)
        run_evaluate(run_config, outcome.checkpoint)
        if "geo_prior_cases" in paths or config.paths.geo_prior_cases is not None:
            run_geo_prior(run_config, outcome.checkpoint)
        summaries.append(outcome.run_dir / EVAL_SUMMARY_FILE)
    return run_report(config, summaries)
