"""
Split one global seed into independent per-purpose streams.

Each purpose has a fixed spawn key, so adding a purpose never shifts the
streams of the existing ones.
"""

import numpy as np

SEED_PURPOSES = {
    "synth": 0,
    "cap": 1,
    "init": 2,
    "shuffle": 3,
    "pa": 4,
}


def derive_seed(global_seed: int, purpose: str) -> int:
    if purpose not in SEED_PURPOSES:
        raise KeyError(f"unknown seed purpose '{purpose}' (known: {sorted(SEED_PURPOSES)})")
    seq = np.random.SeedSequence(global_seed, spawn_key=(SEED_PURPOSES[purpose],))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def make_rng(global_seed: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(global_seed, purpose))
