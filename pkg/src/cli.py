"""
Command-line surface.

    synth-generate   write a synthetic world (occurrences, grid, eval set, geo-prior cases, manifest)
    train            train one model, write checkpoint + history
    evaluate         AUC / AP report for a checkpoint
    geo-prior        top-1 gain of vision x SDM scores for a checkpoint
    report           merge evaluation summaries into one comparison table
    pipeline         all of the above for several loss presets

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

import argparse
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

from src.models.mlp import MlpArchitecture
from src.utils.config import (
    LAMBDA1_PRESETS,
    LOSS_PRESETS,
    RunConfig,
    get_all_loss_presets,
    get_lambda1_preset,
    load_run_config,
)
from src.utils.errors import OutputLockedError, exit_code_for
from src.utils.logging_setup import setup_logging

logger = logging.getLogger(__name__)

LOCK_FILE = ".sdm.lock"


# -------------------------------------------------------------------
# Lockfile
# -------------------------------------------------------------------

@contextmanager
def output_lock(output_dir: Path) -> Iterator[Path]:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    lock = output_dir / LOCK_FILE
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise OutputLockedError(f"{output_dir} is in use by another run (remove {lock} if it is stale)") from exc
    with os.fdopen(fd, "w") as handle:
        handle.write(str(os.getpid()))
    try:
        yield lock
    finally:
        lock.unlink(missing_ok=True)


# -------------------------------------------------------------------
# Subcommands
# -------------------------------------------------------------------

def cmd_synth_generate(config: RunConfig) -> int:
    from src.pipeline import run_synth_generate

    paths = run_synth_generate(config)
    for key, path in paths.items():
        print(f"[OK] {key}: {path}")
    return 0


def cmd_train(config: RunConfig, run_name: Optional[str] = None) -> int:
    from src.pipeline import run_train

    outcome = run_train(config, run_name)
    print(f"[OK] checkpoint: {outcome.checkpoint}")
    print(f"final loss: {outcome.history.final_loss:.6f}")
    return 0


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def cmd_evaluate(config: RunConfig, checkpoint: Path) -> int:
    from src.pipeline import run_evaluate

    summary = run_evaluate(config, checkpoint)
    print(f"AUC all_mean: {_fmt(summary['auc']['all_mean'])}  rare_mean: {_fmt(summary['auc']['rare_mean'])}")
    print(f"AP  all_mean: {_fmt(summary['ap']['all_mean'])}  rare_mean: {_fmt(summary['ap']['rare_mean'])}")
    return 0


def cmd_geo_prior(config: RunConfig, checkpoint: Path) -> int:
    from src.pipeline import run_geo_prior

    report = run_geo_prior(config, checkpoint)
    print(f"top-1 {report.baseline_top1:.4f} -> {report.combined_top1:.4f}  delta: {report.delta_top1:+.2f} pp")
    if report.n_skipped:
        print(f"[WARN] {report.n_skipped} cases outside the grid were skipped")
    return 0


def cmd_report(config: RunConfig, summaries: List[Path]) -> int:
    from src.pipeline import run_report

    table = run_report(config, summaries)
    print(table.to_string(index=False))
    return 0


def cmd_pipeline(config: RunConfig, losses: List[str]) -> int:
    from src.pipeline import run_pipeline

    table = run_pipeline(config, losses)
    print(table.to_string(index=False))
    return 0


# -------------------------------------------------------------------
# Parser
# -------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="RunConfig JSON file")
    parser.add_argument("--output-dir", type=Path, help="overrides paths.output_dir and $SDM_OUTPUT_DIR")
    parser.add_argument("--seed", type=int, help="global seed")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING, ... (default $SDM_LOG_LEVEL or INFO)")


def _add_synth(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--species", type=int, dest="synth_species", help="synth.n_species")
    parser.add_argument("--total-observations", type=int)
    parser.add_argument("--tail-exponent", type=float)
    parser.add_argument("--count-profile", choices=["longtail", "uniform"])
    parser.add_argument("--eval-sites", type=int)
    parser.add_argument("--geo-prior-cases", type=int, dest="geo_prior_case_count")


def _add_data(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--occurrences", type=Path)
    parser.add_argument("--grid", type=Path)
    parser.add_argument("--n-species", type=int, help="species count S (default: max species id + 1)")
    parser.add_argument("--cap", type=int, help="per-species observation cap")
    parser.add_argument("--no-location-encoding", action="store_true")


def _add_train(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--loss", choices=list(LOSS_PRESETS), help="loss preset")
    parser.add_argument("--loss-kind", choices=["bce", "full", "full_weighted"])
    parser.add_argument("--lambda", type=float, dest="lambda_")
    lambda1 = parser.add_mutually_exclusive_group()
    lambda1.add_argument("--lambda1", type=float)
    lambda1.add_argument("--lambda1-preset", choices=list(LAMBDA1_PRESETS), help="lambda1 tuned to a taxonomy size")
    parser.add_argument("--lambda2", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--checkpoint-interval", type=int)
    parser.add_argument("--full-size", action="store_true", help="5 hidden layers of width 1000")
    parser.add_argument("--no-progress", action="store_true")


def _add_eval(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--eval-sites-file", type=Path, dest="eval_sites_path")
    parser.add_argument("--eval-labels-file", type=Path, dest="eval_labels_path")
    parser.add_argument("--rare-threshold", type=int)
    parser.add_argument("--rare-preset", choices=["glc23", "snt", "iucn"])
    parser.add_argument("--n-jobs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdm", description="Presence-only species distribution modeling")
    sub = parser.add_subparsers(dest="cmd", required=True)

    synth = sub.add_parser("synth-generate", help="write a synthetic long-tailed world")
    _add_common(synth)
    _add_synth(synth)

    train = sub.add_parser("train", help="train one model")
    _add_common(train)
    _add_data(train)
    _add_train(train)
    train.add_argument("--run-name", help="subdirectory of <output>/runs (default: loss label)")

    evaluate = sub.add_parser("evaluate", help="per-species AUC and AP of a checkpoint")
    _add_common(evaluate)
    _add_data(evaluate)
    _add_eval(evaluate)
    evaluate.add_argument("--checkpoint", type=Path, required=True)

    geo = sub.add_parser("geo-prior", help="top-1 gain from SDM reweighting of vision scores")
    _add_common(geo)
    geo.add_argument("--grid", type=Path)
    geo.add_argument("--cases", type=Path, help="geo-prior cases CSV")
    geo.add_argument("--no-location-encoding", action="store_true")
    geo.add_argument("--checkpoint", type=Path, required=True)

    report = sub.add_parser("report", help="merge evaluation summaries into a comparison CSV")
    _add_common(report)
    report.add_argument("summaries", nargs="*", type=Path, help="eval_summary.json files (default: all runs)")

    pipeline = sub.add_parser("pipeline", help="generate, train every loss preset, evaluate, report")
    _add_common(pipeline)
    _add_synth(pipeline)
    _add_data(pipeline)
    _add_train(pipeline)
    _add_eval(pipeline)
    pipeline.add_argument("--losses", nargs="+", choices=get_all_loss_presets(), default=get_all_loss_presets())

    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted RunConfig keys for every flag that was given."""
    flag_keys = {
        "output_dir": "paths.output_dir",
        "seed": "seed",
        "synth_species": "synth.n_species",
        "total_observations": "synth.total_observations",
        "tail_exponent": "synth.tail_exponent",
        "count_profile": "synth.count_profile",
        "eval_sites": "synth.eval_sites",
        "geo_prior_case_count": "synth.geo_prior_cases",
        "occurrences": "paths.occurrences",
        "grid": "paths.grid",
        "eval_sites_path": "paths.eval_sites",
        "eval_labels_path": "paths.eval_labels",
        "cases": "paths.geo_prior_cases",
        "n_species": "n_species",
        "cap": "observation_cap",
        "loss_kind": "train.loss.kind",
        "lambda_": "train.loss.lambda",
        "lambda1": "train.loss.lambda1",
        "lambda2": "train.loss.lambda2",
        "epochs": "train.epochs",
        "lr": "train.lr",
        "batch_size": "train.batch_size",
        "checkpoint_interval": "train.checkpoint_interval",
        "rare_threshold": "metrics.rare_threshold",
        "rare_preset": "metrics.rare_preset",
        "n_jobs": "metrics.n_jobs",
    }
    overrides: Dict[str, Any] = {}
    # a preset sets its own keys and keeps the rest (lambda1); single-value flags then refine it
    if getattr(args, "loss", None):
        overrides.update({f"train.loss.{key}": value for key, value in LOSS_PRESETS[args.loss].items()})
    if getattr(args, "lambda1_preset", None):
        overrides["train.loss.lambda1"] = get_lambda1_preset(args.lambda1_preset)
    for attr, key in flag_keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = str(value) if isinstance(value, Path) else value
    if getattr(args, "no_location_encoding", False):
        overrides["location_encoding"] = False
    if getattr(args, "full_size", False):
        overrides["model"] = MlpArchitecture.full_size().model_dump()
    if getattr(args, "no_progress", False):
        overrides["train.show_progress"] = False
    return overrides


def dispatch(args: argparse.Namespace, config: RunConfig) -> int:
    if args.cmd == "synth-generate":
        return cmd_synth_generate(config)
    if args.cmd == "train":
        return cmd_train(config, args.run_name)
    if args.cmd == "evaluate":
        return cmd_evaluate(config, args.checkpoint)
    if args.cmd == "geo-prior":
        return cmd_geo_prior(config, args.checkpoint)
    if args.cmd == "report":
        return cmd_report(config, args.summaries)
    return cmd_pipeline(config, args.losses)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        setup_logging(args.log_level)
        config = load_run_config(args.config, overrides_from_args(args))
        with output_lock(config.paths.output_dir):
            return dispatch(args, config)
    except Exception as exc:
        logger.debug("Command failed", exc_info=True)
        print(f"[ERROR] {exc}", file=sys.stderr)
        return exit_code_for(exc)
