import json

import numpy as np
import pytest
from pydantic import ValidationError

from src.data_collection.env_grid import EnvGrid
from src.data_collection.occurrences import load_occurrences_csv
from src.data_collection.synthetic_world import (
    NicheModel,
    SynthConfig,
    draw_longtail_counts,
    generate_env_grid,
    generate_eval_set,
    generate_geo_prior_cases,
    generate_niches,
    generate_world,
    sample_presences,
    write_world,
)
from src.utils.errors import DataValidationError


def test_env_grid_is_deterministic_and_standardised(tiny_synth_config):
    first = generate_env_grid(tiny_synth_config, np.random.default_rng(5))
    again = generate_env_grid(tiny_synth_config, np.random.default_rng(5))
    np.testing.assert_array_equal(first.features, again.features)
    flat = first.flat_features
    np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(flat.std(axis=0), 1.0, rtol=1e-12)


# -------------------------------------------------------------------
# long-tail counts
# -------------------------------------------------------------------

def test_flat_profile_splits_evenly():
    np.testing.assert_array_equal(draw_longtail_counts(2, 100, 0.0), [50, 50])


def test_harmonic_profile():
    np.testing.assert_array_equal(draw_longtail_counts(4, 100, 1.0), [48, 24, 16, 12])


def test_default_profile_is_long_tailed():
    counts = draw_longtail_counts(200, 20000, 1.3)
    assert counts.sum() == 20000
    assert counts.min() >= 1
    assert counts.max() / counts.min() >= 100
    assert np.mean(counts < counts.mean() / 2) >= 0.2
    assert np.all(np.diff(counts) <= 0)


def test_every_species_keeps_a_record():
    counts = draw_longtail_counts(50, 60, 3.0)
    assert counts.sum() == 60
    assert counts.min() == 1


def test_non_positive_exponent_rejected_by_config():
    with pytest.raises(ValidationError, match="tail_exponent"):
        SynthConfig(tail_exponent=0.0)
    with pytest.raises(ValidationError, match="tail_exponent"):
        SynthConfig(tail_exponent=-1.0)


def test_uniform_profile_overrides_exponent():
    assert SynthConfig(count_profile="uniform").effective_exponent == 0.0


def test_too_few_observations_rejected():
    with pytest.raises(ValidationError):
        SynthConfig(n_species=10, total_observations=5)


# -------------------------------------------------------------------
# presences
# -------------------------------------------------------------------

def test_presences_follow_counts_and_land_in_suitable_cells(tiny_synth_config):
    rng = np.random.default_rng(11)
    grid = generate_env_grid(tiny_synth_config, rng)
    niches = generate_niches(tiny_synth_config, grid, rng)
    counts = np.array([30, 10, 5, 3, 2, 1, 1, 1])
    records = sample_presences(niches, grid, counts, rng)

    species = np.array([r.species_id for r in records])
    np.testing.assert_array_equal(np.bincount(species, minlength=8), counts)
    lons = np.array([r.lon for r in records])
    lats = np.array([r.lat for r in records])
    assert np.all(grid.contains(lons, lats))


def test_suitability_peaks_at_the_niche_centre():
    niche = NicheModel(center=np.array([0.5, -1.0]), width=0.8)
    values = niche.suitability(np.array([[0.5, -1.0], [0.6, -1.0], [40.0, 3.0]]))
    assert values[0] == 1.0
    assert 0.0 <= values[2] < values[1] < 1.0


def _record_cells(grid, records):
    row, col = grid.cell_index([r.lon for r in records], [r.lat for r in records])
    return np.bincount(row * grid.width + col, minlength=grid.n_cells)


def test_presence_cells_follow_normalised_suitability():
    grid = EnvGrid(width=2, height=2, bounds=(0.0, 2.0, 0.0, 2.0), features=[[[0.0], [0.5]], [[1.0], [1.5]]])
    niche = NicheModel(center=np.array([0.4]), width=0.6)
    draws = 100_000
    counts = _record_cells(grid, sample_presences([niche], grid, [draws], np.random.default_rng(21)))

    suit = niche.suitability(grid.flat_features)
    p = suit / suit.sum()
    sigma = np.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(counts - draws * p) < 3 * sigma)


def test_narrow_niche_puts_every_record_in_one_cell():
    grid = EnvGrid(width=3, height=1, bounds=(0.0, 3.0, 0.0, 1.0), features=[[[0.0], [1.0], [2.0]]])
    narrow = NicheModel(center=np.array([1.0]), width=1e-3)
    counts = _record_cells(grid, sample_presences([narrow], grid, [500], np.random.default_rng(2)))
    np.testing.assert_array_equal(counts, [0, 500, 0])


def test_species_unsuitable_everywhere_rejected():
    grid = EnvGrid(width=2, height=1, bounds=(0.0, 2.0, 0.0, 1.0), features=[[[0.0], [1.0]]])
    far = NicheModel(center=np.array([100.0]), width=0.5)
    with pytest.raises(DataValidationError, match="suitability"):
        sample_presences([far], grid, [3], np.random.default_rng(0))


# -------------------------------------------------------------------
# eval sites
# -------------------------------------------------------------------

def test_eval_set_labels_follow_suitability(small_grid):
    niches = [
        NicheModel(center=np.array([0.0, 0.0]), width=1e6),
        NicheModel(center=np.array([1e3, -1e3]), width=1.0),
        NicheModel(center=np.array([10.0, -10.0]), width=10.0),
    ]
    eval_set = generate_eval_set(niches, small_grid, 200, np.random.default_rng(4))

    assert eval_set.labels.shape == (200, 3)
    assert np.all(small_grid.contains(eval_set.lons, eval_set.lats))
    assert eval_set.labels[:, 0].all()
    assert not eval_set.labels[:, 1].any()
    assert eval_set.excluded == (0, 1)
    np.testing.assert_array_equal(eval_set.included, [2])


def test_eval_set_is_seeded(small_grid):
    niches = [NicheModel(center=np.array([10.0, -10.0]), width=10.0)]
    first = generate_eval_set(niches, small_grid, 50, np.random.default_rng(9))
    again = generate_eval_set(niches, small_grid, 50, np.random.default_rng(9))
    np.testing.assert_array_equal(first.labels, again.labels)
    np.testing.assert_array_equal(first.lons, again.lons)


def test_eval_set_needs_a_site(small_grid):
    with pytest.raises(DataValidationError):
        generate_eval_set([NicheModel(center=np.zeros(2), width=1.0)], small_grid, 0, np.random.default_rng(0))


# -------------------------------------------------------------------
# geo-prior cases
# -------------------------------------------------------------------

def _grid_and_niches(config):
    rng = np.random.default_rng(2)
    grid = generate_env_grid(config, rng)
    return grid, generate_niches(config, grid, rng)


def test_clean_cases_rank_the_true_class_first(tiny_synth_config):
    grid, niches = _grid_and_niches(tiny_synth_config)
    cases = generate_geo_prior_cases(niches, grid, 50, 0.0, np.random.default_rng(3))
    assert all(int(np.argmax(c.vision_scores)) == c.true_class for c in cases)


def test_fully_corrupted_cases_rank_the_true_class_second(tiny_synth_config):
    grid, niches = _grid_and_niches(tiny_synth_config)
    cases = generate_geo_prior_cases(niches, grid, 50, 1.0, np.random.default_rng(3))
    for case in cases:
        order = np.argsort(-case.vision_scores, kind="stable")
        assert order[0] != case.true_class
        assert order[1] == case.true_class


# -------------------------------------------------------------------
# whole world
# -------------------------------------------------------------------

def test_world_is_deterministic(tiny_synth_config):
    first = generate_world(tiny_synth_config)
    again = generate_world(tiny_synth_config)
    assert first.records == again.records
    np.testing.assert_array_equal(first.grid.features, again.grid.features)
    np.testing.assert_array_equal(first.eval_set.labels, again.eval_set.labels)


def test_world_shapes(tiny_world, tiny_synth_config):
    assert len(tiny_world.records) == tiny_synth_config.total_observations
    assert tiny_world.eval_set.labels.shape == (150, 8)
    assert len(tiny_world.geo_prior_cases) == 60
    # sinusoidal encoding + 3 environment channels
    assert tiny_world.eval_set.features.shape[1] == 7


def test_write_world(tiny_world, tmp_path):
    paths = write_world(tiny_world, tmp_path / "new" / "world")
    for key in ("occurrences", "grid", "eval_sites", "eval_labels", "geo_prior_cases", "manifest"):
        assert paths[key].exists()
    manifest = json.loads(paths["manifest"].read_text())
    assert manifest["stand_in"] is True
    assert manifest["n_records"] == len(tiny_world.records)
    assert manifest["config"]["seed"] == 7
    assert len(load_occurrences_csv(paths["occurrences"])) == len(tiny_world.records)
