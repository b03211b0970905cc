import numpy as np
import pytest

from src.data_collection.env_grid import EnvGrid
from src.data_collection.synthetic_world import SynthConfig, generate_world
from src.models.location_encoding import LocationEncoderConfig
from src.models.mlp import MlpConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_grid():
    """4 columns x 3 rows over [0, 4] x [0, 3]; cell (row, col) holds [10 * row + col, -(10 * row + col)]."""
    ids = (10 * np.arange(3)[:, None] + np.arange(4)[None, :]).astype(float)
    features = np.stack([ids, -ids], axis=-1)
    return EnvGrid(width=4, height=3, bounds=(0.0, 4.0, 0.0, 3.0), features=features)


@pytest.fixture
def tiny_synth_config():
    return SynthConfig(
        n_species=8,
        width=16,
        height=12,
        n_features=3,
        total_observations=400,
        tail_exponent=1.3,
        eval_sites=150,
        geo_prior_cases=60,
        seed=7,
    )


@pytest.fixture
def tiny_world(tiny_synth_config):
    return generate_world(tiny_synth_config, LocationEncoderConfig())


@pytest.fixture
def desk_mlp_config():
    return MlpConfig(input_dim=6, output_dim=3, hidden_layers=2, hidden_width=8)
