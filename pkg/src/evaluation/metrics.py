"""
Evaluation metrics.

- roc_auc / average_precision : per-species ranking metrics on presence-absence sites
- evaluate                    : per-species AUC and AP with all / rare / frequency-bucket means
- geo_prior_gain              : top-1 accuracy change when SDM suitability reweights vision scores
- compare_summaries           : one comparison row per training run
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import rankdata

from src.data_collection.env_grid import EnvGrid
from src.data_collection.occurrences import GeoPriorCase
from src.models.checkpoint import check_compatible
from src.models.location_encoding import LocationEncoderConfig
from src.models.mlp import Parameters, predict
from src.preprocessing.dataset import EvalSet, SpeciesCatalog, assemble_features, group_by_frequency
from src.utils.errors import DataValidationError, ShapeMismatchError

logger = logging.getLogger(__name__)

METRICS = ("auc", "ap")


# ============================================================================
# PER-SPECIES METRICS
# ============================================================================

def _binary_labels(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if not np.all((labels == 0) | (labels == 1)):
        raise DataValidationError("labels must be 0 or 1")
    return labels.astype(bool)


def roc_auc(scores, labels) -> float:
    """
    Mann-Whitney AUC: pairs with score_pos > score_neg count 1, ties 0.5,
    divided by P * N. Computed from tie-averaged ranks.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive = _binary_labels(labels)
    if scores.shape != positive.shape:
        raise ShapeMismatchError(f"scores {scores.shape} and labels {positive.shape} differ")
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataValidationError("AUC undefined: labels are constant")

    ranks = rankdata(scores, method="average")
    u_statistic = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_statistic / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Mean of precision@k over the ranks k of the positives; ties keep ascending site order."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = _binary_labels(labels)
    if scores.shape != positive.shape:
        raise ShapeMismatchError(f"scores {scores.shape} and labels {positive.shape} differ")
    if not positive.any():
        raise DataValidationError("average precision undefined: no positive sites")

    order = np.lexsort((np.arange(scores.size), -scores))
    hits = positive[order]
    hit_ranks = np.flatnonzero(hits) + 1
    precision_at_hits = np.arange(1, hit_ranks.size + 1) / hit_ranks
    return float(precision_at_hits.mean())


def _species_metrics(scores: np.ndarray, labels: np.ndarray) -> Tuple[float, float]:
    n_pos = int(labels.sum())
    auc = roc_auc(scores, labels) if 0 < n_pos < labels.size else np.nan
    ap = average_precision(scores, labels) if n_pos > 0 else np.nan
    return auc, ap


# ============================================================================
# REPORTS
# ============================================================================

def _mean_or_none(values: np.ndarray) -> Optional[float]:
    return float(values.mean()) if values.size else None


@dataclass
class MetricReport:
    metric: str
    values: np.ndarray  # per species, NaN where excluded
    excluded: List[int]
    rare_threshold: int
    rare_species: List[int]
    buckets: Dict[str, List[int]]
    all_mean: Optional[float] = field(init=False)
    rare_mean: Optional[float] = field(init=False)
    bucket_means: Dict[str, Optional[float]] = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        included = np.isfinite(self.values)
        self.all_mean = _mean_or_none(self.values[included])
        rare = np.asarray(self.rare_species, dtype=np.int64)
        self.rare_mean = _mean_or_none(self.values[rare[included[rare]]]) if rare.size else None
        self.bucket_means = {}
        for label, members in self.buckets.items():
            members = np.asarray(members, dtype=np.int64)
            kept = members[included[members]] if members.size else members
            self.bucket_means[label] = _mean_or_none(self.values[kept])

    def bucket_of(self) -> List[str]:
        labels = [""] * self.values.size
        for label, members in self.buckets.items():
            for s in members:
                labels[s] = label
        return labels

    def to_frame(self) -> pd.DataFrame:
        """One row per included species: species_id, metric, value, bucket, rare."""
        included = np.flatnonzero(np.isfinite(self.values))
        bucket = self.bucket_of()
        rare = set(self.rare_species)
        return pd.DataFrame(
            {
                "species_id": included,
                "metric": self.metric,
                "value": self.values[included],
                "bucket": [bucket[s] for s in included],
                "rare": [int(s) in rare for s in included],
            }
        )

    def to_summary(self) -> Dict[str, Any]:
        return {
            "metric": self.metric,
            "all_mean": self.all_mean,
            "rare_mean": self.rare_mean,
            "rare_threshold": self.rare_threshold,
            "n_species": int(np.isfinite(self.values).sum()),
            "n_rare": len(self.rare_species),
            "buckets": dict(self.bucket_means),
            "bucket_sizes": {label: len(members) for label, members in self.buckets.items()},
            "excluded": list(self.excluded),
        }


def evaluate(
    params: Parameters,
    eval_set: EvalSet,
    catalog: SpeciesCatalog,
    rare_threshold: int,
    buckets: Sequence[int],
    n_jobs: int = 1,
    batch_size: int = 4096,
) -> Dict[str, MetricReport]:
    """
    Eval-mode predictions at every site, then per-species AUC and AP.

    Rare species are those with training count <= rare_threshold. Species with
    an undefined metric are excluded from every mean and listed in the report.
    """
    if rare_threshold < 1:
        raise DataValidationError(f"rare_threshold must be >= 1, got {rare_threshold}")
    if eval_set.n_species != catalog.n_species:
        raise ShapeMismatchError(f"eval set has S={eval_set.n_species}, catalog has S={catalog.n_species}")
    check_compatible(params, eval_set.features.shape[1], eval_set.n_species)

    predictions = predict(params, eval_set.features, batch_size=batch_size)
    labels = eval_set.labels
    S = eval_set.n_species
    if n_jobs == 1:
        per_species = [_species_metrics(predictions[:, s], labels[:, s]) for s in range(S)]
    else:
        per_species = Parallel(n_jobs=n_jobs)(
            delayed(_species_metrics)(predictions[:, s], labels[:, s]) for s in range(S)
        )
    values = {"auc": np.array([m[0] for m in per_species]), "ap": np.array([m[1] for m in per_species])}
    values["auc"][list(eval_set.excluded)] = np.nan

    groups = group_by_frequency(catalog, buckets)
    rare = [int(s) for s in catalog.rare_species(rare_threshold)]
    reports = {}
    for metric in METRICS:
        excluded = [int(s) for s in np.flatnonzero(~np.isfinite(values[metric]))]
        if excluded:
            logger.warning("[EVAL] %s undefined for %d species, excluded: %s", metric, len(excluded), excluded[:20])
        reports[metric] = MetricReport(metric, values[metric], excluded, rare_threshold, rare, groups)

    if not rare:
        logger.warning("[EVAL] no species with <= %d training records; rare mean is undefined", rare_threshold)
    logger.info(
        "[EVAL] mean AUC %.4f (rare %s), mAP %.4f over %d sites",
        reports["auc"].all_mean if reports["auc"].all_mean is not None else float("nan"),
        f"{reports['auc'].rare_mean:.4f}" if reports["auc"].rare_mean is not None else "n/a",
        reports["ap"].all_mean if reports["ap"].all_mean is not None else float("nan"),
        eval_set.n_sites,
    )
    return reports


# ============================================================================
# GEO PRIOR
# ============================================================================

@dataclass(frozen=True)
class GeoPriorReport:
    baseline_top1: float
    combined_top1: float
    n_cases: int
    n_skipped: int

    @property
    def delta_top1(self) -> float:
        """Percentage points."""
        return (self.combined_top1 - self.baseline_top1) * 100.0

    def to_summary(self) -> Dict[str, Any]:
        return {
            "baseline_top1": self.baseline_top1,
            "combined_top1": self.combined_top1,
            "delta_top1": self.delta_top1,
            "n_cases": self.n_cases,
            "n_skipped": self.n_skipped,
        }


def geo_prior_gain(
    params: Parameters,
    cases: Sequence[GeoPriorCase],
    grid: EnvGrid,
    encoder: Optional[LocationEncoderConfig],
) -> GeoPriorReport:
    """
    Combined class score = vision score x predicted suitability at the image
    location. Argmax ties go to the lowest species index. Cases outside the
    grid are skipped with a warning.
    """
    if not cases:
        raise DataValidationError("geo-prior evaluation needs at least one case")
    n_classes = {case.vision_scores.size for case in cases}
    if n_classes != {params.config.output_dim}:
        raise ShapeMismatchError(
            f"vision scores have {sorted(n_classes)} classes, model predicts S={params.config.output_dim}"
        )

    lons = np.array([case.location[0] for case in cases], dtype=np.float64)
    lats = np.array([case.location[1] for case in cases], dtype=np.float64)
    inside = grid.contains(lons, lats)
    n_skipped = int((~inside).sum())
    if n_skipped:
        logger.warning("[GEO-PRIOR] %d of %d cases lie outside the grid and are skipped", n_skipped, len(cases))
    if not inside.any():
        raise DataValidationError("no geo-prior case lies inside the grid")

    kept = np.flatnonzero(inside)
    vision = np.vstack([cases[i].vision_scores for i in kept])
    truth = np.array([cases[i].true_class for i in kept])
    features = assemble_features(grid, lons[kept], lats[kept], encoder)
    check_compatible(params, features.shape[1], params.config.output_dim)
    suitability = predict(params, features)

    baseline = float(np.mean(np.argmax(vision, axis=1) == truth))
    combined = float(np.mean(np.argmax(vision * suitability, axis=1) == truth))
    report = GeoPriorReport(baseline, combined, n_cases=kept.size, n_skipped=n_skipped)
    logger.info(
        "[GEO-PRIOR] top-1 %.4f -> %.4f (delta %+.2f pp) over %d cases",
        baseline, combined, report.delta_top1, kept.size,
    )
    return report


# ============================================================================
# RUN COMPARISON
# ============================================================================

COMPARISON_COLUMNS = ["run", "loss", "auc_all", "auc_rare", "ap_all", "ap_rare", "delta_top1"]


def _value(summary: Mapping[str, Any], section: str, key: str) -> float:
    value = (summary.get(section) or {}).get(key)
    return float(value) if value is not None else np.nan


def compare_summaries(summaries: Mapping[str, Mapping[str, Any]]) -> pd.DataFrame:
    """
    One row per run from evaluation summaries shaped
    {"loss": ..., "auc": {...}, "ap": {...}, "geo_prior": {...}}.
    """
    rows = []
    for run, summary in summaries.items():
        rows.append(
            {
                "run": run,
                "loss": summary.get("loss", run),
                "auc_all": _value(summary, "auc", "all_mean"),
                "auc_rare": _value(summary, "auc", "rare_mean"),
                "ap_all": _value(summary, "ap", "all_mean"),
                "ap_rare": _value(summary, "ap", "rare_mean"),
                "delta_top1": _value(summary, "geo_prior", "delta_top1"),
            }
        )
    return pd.DataFrame(rows, columns=COMPARISON_COLUMNS)
