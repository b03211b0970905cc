"""
Entry point for the sdm command line.

Run:
    python scripts/sdm.py synth-generate --config configs/desk.json
    python scripts/sdm.py train --config configs/desk.json --loss full_weighted_l2_0.5
    python scripts/sdm.py evaluate --config configs/desk.json --checkpoint outputs/runs/full_weighted_l2_0.5/checkpoint.bin
"""

import sys
from pathlib import Path

# Ensure project root is on PYTHONPATH
PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
