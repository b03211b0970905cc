"""
Multi-seed comparison of the loss presets on synthetic worlds.

For every seed: generate a world, train each loss preset, evaluate, run the
geo-prior task. Then prints per-loss medians across seeds.

Run:
    python scripts/reproduce.py --config configs/desk.json --seeds 0 1 2 3 4
    python scripts/reproduce.py --config configs/desk.json --count-profile uniform
"""

import argparse
import sys
from pathlib import Path

# Ensure project root is on PYTHONPATH
PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

import pandas as pd

from src.pipeline import run_pipeline
from src.utils.config import get_all_loss_presets, load_run_config
from src.utils.errors import exit_code_for
from src.utils.logging_setup import setup_logging


def print_header(text):
    print("\n" + "=" * 70)
    print(text.center(70))
    print("=" * 70 + "\n")


def main():
    parser = argparse.ArgumentParser(description="Multi-seed loss comparison on synthetic worlds")
    parser.add_argument("--config", type=Path, default=PROJECT_ROOT / "configs" / "desk.json")
    parser.add_argument("--output-dir", type=Path, default=Path("outputs") / "reproduce")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--losses", nargs="+", choices=get_all_loss_presets(), default=get_all_loss_presets())
    parser.add_argument("--count-profile", choices=["longtail", "uniform"], default="longtail")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--log-level", default="WARNING")
    args = parser.parse_args()

    setup_logging(args.log_level)
    tables = []
    try:
        for seed in args.seeds:
            print_header(f"SEED {seed} ({args.count_profile})")
            config = load_run_config(
                args.config,
                {
                    "seed": seed,
                    "paths.output_dir": str(args.output_dir / args.count_profile / f"seed_{seed}"),
                    "synth.count_profile": args.count_profile,
                    "train.epochs": args.epochs,
                    "train.show_progress": False,
                },
            )
            table = run_pipeline(config, args.losses)
            table.insert(0, "seed", seed)
            print(table.to_string(index=False))
            tables.append(table)
    except Exception as exc:
        print(f"[ERROR] {exc}", file=sys.stderr)
        return exit_code_for(exc)

    results = pd.concat(tables, ignore_index=True)
    out = args.output_dir / f"results_{args.count_profile}.csv"
    results.to_csv(out, index=False, float_format="%.6f")

    print_header("MEDIAN OVER SEEDS")
    medians = results.groupby("loss")[["auc_all", "auc_rare", "ap_all", "ap_rare", "delta_top1"]].median()
    print(medians.to_string())
    positive_gain = results.groupby("loss")["delta_top1"].apply(lambda d: int((d > 0).sum()))
    print("\nseeds with positive geo-prior gain:")
    print(positive_gain.to_string())
    print(f"\n[OK] per-seed results: {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
