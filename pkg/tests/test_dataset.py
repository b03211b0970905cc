import logging

import numpy as np
import pytest

from src.data_collection.env_grid import EnvGrid
from src.data_collection.occurrences import OccurrenceRecord
from src.models.location_encoding import LocationEncoderConfig
from src.preprocessing.dataset import (
    SpeciesCatalog,
    TrainingSet,
    assemble_dataset,
    build_catalog,
    build_eval_set,
    group_by_frequency,
)
from src.utils.errors import DataValidationError


def _records(counts):
    records = []
    for species, count in enumerate(counts):
        records.extend(OccurrenceRecord(0.5, 0.5, species) for _ in range(count))
    return records


def test_weight_is_n_over_count():
    catalog = build_catalog(_records([4, 96]), 2)
    assert catalog.n == 100
    assert catalog.weights[0] == 25.0


def test_single_species_flags_full_weighted_ineligible():
    catalog = build_catalog(_records([10]), 1)
    assert catalog.weights[0] == 1.0
    assert not catalog.full_weighted_eligible
    assert catalog.singular_species == [0]


def test_two_species_weights():
    catalog = build_catalog(_records([2, 8]), 2)
    np.testing.assert_array_equal(catalog.weights, [5.0, 1.25])
    assert catalog.full_weighted_eligible


def test_weight_identity_holds_for_random_counts(rng):
    counts = rng.integers(1, 500, size=50)
    catalog = SpeciesCatalog(counts=counts, n=int(counts.sum()))
    np.testing.assert_allclose(catalog.weights * catalog.counts, catalog.n, rtol=1e-15)
    np.testing.assert_allclose(catalog.frequencies, 1.0 / catalog.weights, rtol=1e-15)


def test_missing_species_listed():
    records = _records([3, 0, 2, 0])
    with pytest.raises(DataValidationError, match="1, 3"):
        build_catalog(records, 4)


def test_species_beyond_count_rejected():
    with pytest.raises(DataValidationError, match="not in"):
        build_catalog(_records([1, 1, 1]), 2)


# -------------------------------------------------------------------
# assemble_dataset
# -------------------------------------------------------------------

@pytest.fixture
def wide_grid():
    features = np.random.default_rng(3).normal(size=(2, 3, 45))
    return EnvGrid(width=3, height=2, bounds=(0.0, 3.0, 0.0, 2.0), features=features)


def test_input_width_without_encoder(wide_grid):
    dataset, _ = assemble_dataset(_records([2, 3]), wide_grid, None, 2)
    assert dataset.input_dim == 45
    assert len(dataset) == 5


def test_input_width_with_encoder(wide_grid):
    dataset, _ = assemble_dataset(_records([2, 3]), wide_grid, LocationEncoderConfig(), 2)
    assert dataset.input_dim == 49
    # encoding first, environment after
    np.testing.assert_allclose(dataset.features[0, :4], [np.sin(np.pi / 360), np.cos(np.pi / 360)] * 2)
    np.testing.assert_array_equal(dataset.features[0, 4:], wide_grid.features[0, 0])


def test_zero_records_fail_on_catalog(wide_grid):
    with pytest.raises(DataValidationError, match="without presence records"):
        assemble_dataset([], wide_grid, None, 2)


def test_samples_carry_their_positive(wide_grid):
    dataset, _ = assemble_dataset(_records([1, 2]), wide_grid, None, 2)
    assert [sample.positive for sample in dataset] == [0, 1, 1]
    subset = dataset.take([2, 0])
    np.testing.assert_array_equal(subset.positives, [1, 0])


def test_training_set_validation():
    with pytest.raises(DataValidationError):
        TrainingSet(features=np.zeros((2, 3)), positives=np.array([0, 5]), n_species=3)
    with pytest.raises(DataValidationError):
        TrainingSet(features=np.full((1, 3), np.nan), positives=np.array([0]), n_species=3)


# -------------------------------------------------------------------
# group_by_frequency
# -------------------------------------------------------------------

def test_rare_split_at_50():
    catalog = SpeciesCatalog(counts=np.array([30, 200]), n=230)
    assert group_by_frequency(catalog, [50]) == {"<=50": [0], ">50": [1]}


def test_open_bucket_can_be_empty():
    catalog = SpeciesCatalog(counts=np.array([1, 100, 7]), n=108)
    buckets = group_by_frequency(catalog, [100])
    assert buckets[">100"] == []
    assert buckets["<=100"] == [0, 1, 2]


def test_count_on_edge_goes_to_first_fitting_bucket():
    catalog = SpeciesCatalog(counts=np.array([100]), n=200)
    buckets = group_by_frequency(catalog, [50, 100, 1000])
    assert buckets["(50,100]"] == [0]


def test_buckets_partition_species(rng):
    counts = rng.integers(1, 3000, size=300)
    catalog = SpeciesCatalog(counts=counts, n=int(counts.sum()))
    buckets = group_by_frequency(catalog, [25, 50, 100, 250, 500, 1000])
    members = sorted(s for group in buckets.values() for s in group)
    assert members == list(range(300))


def test_edges_must_ascend():
    catalog = SpeciesCatalog(counts=np.array([1]), n=2)
    with pytest.raises(DataValidationError):
        group_by_frequency(catalog, [50, 50])


# -------------------------------------------------------------------
# eval sets
# -------------------------------------------------------------------

def test_constant_columns_are_excluded_with_warning(small_grid, caplog):
    labels = np.array([[1, 0, 1], [1, 1, 0], [1, 0, 0]])
    with caplog.at_level(logging.WARNING):
        eval_set = build_eval_set(
            np.arange(3), [0.5, 1.5, 2.5], [0.5, 0.5, 0.5], labels, small_grid, None
        )
    assert eval_set.excluded == (0,)
    np.testing.assert_array_equal(eval_set.included, [1, 2])
    assert "constant labels" in caplog.text
