import numpy as np
import pytest

from src.models.mlp import (
    PREDICTION_EPS,
    MlpArchitecture,
    MlpConfig,
    backward,
    forward,
    init_params,
    parameter_layout,
    predict,
    sgd_update,
)
from src.utils.errors import DataValidationError, ShapeMismatchError, TrainingError
from tests.gradcheck import assert_gradients_close, numeric_gradient


def _params(config, seed=0):
    return init_params(config, np.random.default_rng(seed))


def test_layout_order(desk_mlp_config):
    names = [name for name, _, _ in parameter_layout(desk_mlp_config)]
    assert names[:2] == ["input.weight", "input.bias"]
    assert names[-2:] == ["head.weight", "head.bias"]
    assert "hidden.1.running_var" in names


def test_presets():
    assert MlpArchitecture.desk().hidden_layers == 2
    assert MlpArchitecture.full_size().hidden_width == 1000
    config = MlpArchitecture.desk().for_data(49, 200)
    assert (config.input_dim, config.output_dim, config.hidden_width) == (49, 200, 64)


def test_init_is_deterministic(desk_mlp_config):
    first, again = _params(desk_mlp_config, 3), _params(desk_mlp_config, 3)
    for name in first.arrays:
        np.testing.assert_array_equal(first[name], again[name])


def test_he_init_scale():
    config = MlpConfig(input_dim=10, output_dim=5, hidden_layers=1, hidden_width=1000)
    params = _params(config)
    for name, fan_in in (("input.weight", 10), ("hidden.0.weight", 1000), ("head.weight", 1000)):
        std = params[name].std()
        assert abs(std / np.sqrt(2.0 / fan_in) - 1.0) < 0.05, name
    np.testing.assert_array_equal(params["hidden.0.gamma"], 1.0)
    np.testing.assert_array_equal(params["hidden.0.beta"], 0.0)
    np.testing.assert_array_equal(params["hidden.0.running_var"], 1.0)


def test_zero_head_predicts_one_half(desk_mlp_config, rng):
    params = _params(desk_mlp_config)
    params["head.weight"][:] = 0.0
    params["head.bias"][:] = 0.0
    yhat, _ = forward(params, rng.normal(size=(5, 6)), mode="train")
    np.testing.assert_array_equal(yhat, 0.5)


def test_predictions_are_clamped(desk_mlp_config, rng):
    params = _params(desk_mlp_config)
    params["head.bias"][:] = [1e3, -1e3, 0.0]
    yhat = predict(params, rng.normal(size=(4, 6)))
    np.testing.assert_array_equal(yhat[:, 0], 1.0 - PREDICTION_EPS)
    np.testing.assert_array_equal(yhat[:, 1], PREDICTION_EPS)


def test_eval_rows_do_not_depend_on_batchmates(desk_mlp_config, rng):
    params = _params(desk_mlp_config)
    batch = rng.normal(size=(10, 6))
    alone = forward(params, batch[3:4], mode="eval")[0]
    together = forward(params, batch, mode="eval")[0]
    np.testing.assert_allclose(alone[0], together[3], rtol=1e-12)


def test_predict_chunks_match_single_pass(desk_mlp_config, rng):
    params = _params(desk_mlp_config)
    features = rng.normal(size=(11, 6))
    np.testing.assert_allclose(predict(params, features, batch_size=3), predict(params, features), rtol=1e-12)
    assert predict(params, np.empty((0, 6))).shape == (0, 3)


def test_train_mode_normalises_over_the_batch(rng):
    config = MlpConfig(input_dim=6, output_dim=3, hidden_layers=2, hidden_width=16)
    params = _params(config)
    _, cache = forward(params, rng.normal(size=(32, 6)), mode="train")
    for layer in cache.layers:
        np.testing.assert_allclose(layer.normalized.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(layer.normalized.std(axis=0), 1.0, rtol=1e-3)


def test_running_statistics_update(desk_mlp_config, rng):
    params = _params(desk_mlp_config)
    batch = rng.normal(size=(6, 6))
    h0 = batch @ params["input.weight"] + params["input.bias"]
    z = h0 @ params["hidden.0.weight"] + params["hidden.0.bias"]

    forward(params, batch, mode="train")
    np.testing.assert_allclose(params["hidden.0.running_mean"], 0.1 * z.mean(axis=0), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(params["hidden.0.running_var"], 0.9 + 0.1 * z.var(axis=0, ddof=1), rtol=1e-12)


def test_eval_mode_leaves_running_statistics_alone(desk_mlp_config, rng):
    params = _params(desk_mlp_config)
    forward(params, rng.normal(size=(6, 6)), mode="eval")
    np.testing.assert_array_equal(params["hidden.0.running_mean"], 0.0)


def test_forward_input_errors(desk_mlp_config):
    params = _params(desk_mlp_config)
    with pytest.raises(DataValidationError, match="at least 2"):
        forward(params, np.zeros((1, 6)), mode="train")
    with pytest.raises(DataValidationError, match="non-finite"):
        forward(params, np.full((3, 6), np.inf), mode="eval")
    with pytest.raises(ShapeMismatchError):
        forward(params, np.zeros((3, 5)), mode="eval")
    with pytest.raises(DataValidationError):
        forward(params, np.zeros((3, 6)), mode="test")


def test_zero_hidden_branch_is_identity(desk_mlp_config, rng):
    params = _params(desk_mlp_config)
    for layer in range(desk_mlp_config.hidden_layers):
        params[f"hidden.{layer}.gamma"][:] = 0.0
    batch = rng.normal(size=(4, 6))
    yhat, cache = forward(params, batch, mode="train")
    h0 = batch @ params["input.weight"] + params["input.bias"]
    np.testing.assert_allclose(cache.hidden_out, h0, rtol=1e-14)
    expected = 1.0 / (1.0 + np.exp(-(h0 @ params["head.weight"] + params["head.bias"])))
    np.testing.assert_allclose(yhat, expected, rtol=1e-12)


# -------------------------------------------------------------------
# backward
# -------------------------------------------------------------------

def test_zero_upstream_gradient_gives_zero_gradients(desk_mlp_config, rng):
    params = _params(desk_mlp_config)
    yhat, cache = forward(params, rng.normal(size=(4, 6)), mode="train")
    grads = backward(params, cache, np.zeros_like(yhat))
    assert sorted(grads) == sorted(params.trainable_names)
    for block in grads.values():
        np.testing.assert_array_equal(block, 0.0)


def test_backward_is_linear_in_upstream_gradient(desk_mlp_config, rng):
    params = _params(desk_mlp_config)
    yhat, cache = forward(params, rng.normal(size=(4, 6)), mode="train")
    upstream = rng.normal(size=yhat.shape)
    once = backward(params, cache, upstream)
    doubled = backward(params, cache, 2.0 * upstream)
    for name in once:
        np.testing.assert_array_equal(doubled[name], 2.0 * once[name])


def test_backward_rejects_eval_cache(desk_mlp_config, rng):
    params = _params(desk_mlp_config)
    yhat, cache = forward(params, rng.normal(size=(4, 6)), mode="eval")
    with pytest.raises(DataValidationError):
        backward(params, cache, np.ones_like(yhat))
    _, train_cache = forward(params, rng.normal(size=(4, 6)), mode="train")
    with pytest.raises(ShapeMismatchError):
        backward(params, train_cache, np.ones((3, 3)))


def _away_from_kinks(config, batch_size, margin=0.05):
    """First seed whose hidden pre-activations all sit at least `margin` from the ReLU kink."""
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        params = init_params(config, rng)
        batch = rng.normal(size=(batch_size, config.input_dim))
        _, cache = forward(params.copy(), batch, mode="train")
        if min(np.abs(layer.bn_out).min() for layer in cache.layers) > margin:
            return params, batch, rng
    raise AssertionError("no seed without near-kink activations")


def test_backward_matches_finite_differences(desk_mlp_config):
    params, batch, rng = _away_from_kinks(desk_mlp_config, 4)
    # non-trivial batch-norm scales; halving at worst keeps every activation 0.025 from its kink
    for layer in range(desk_mlp_config.hidden_layers):
        params[f"hidden.{layer}.gamma"][:] = rng.uniform(0.5, 1.5, size=8)
    upstream = rng.normal(size=(4, 3))

    def objective():
        _, cache = forward(params, batch, mode="train")
        return float(np.sum(upstream * cache.logits))

    _, cache = forward(params, batch, mode="train")
    analytic = backward(params, cache, upstream)
    numeric = {
        name: numeric_gradient(objective, params[name], step=1e-3, points=5) for name in params.trainable_names
    }
    assert_gradients_close(analytic, numeric, rtol=1e-4)


# -------------------------------------------------------------------
# SGD
# -------------------------------------------------------------------

def _grads_like(params, value=0.0):
    return {name: np.full_like(params[name], value) for name in params.trainable_names}


def test_zero_learning_rate_changes_nothing(desk_mlp_config):
    params = _params(desk_mlp_config)
    updated = sgd_update(params, _grads_like(params, 3.0), 0.0)
    for name in params.arrays:
        np.testing.assert_array_equal(updated[name], params[name])


def test_single_scalar_step(desk_mlp_config):
    params = _params(desk_mlp_config)
    params["hidden.0.gamma"][:] = 1.0
    grads = _grads_like(params)
    grads["hidden.0.gamma"][:] = 0.5
    updated = sgd_update(params, grads, 0.001)
    np.testing.assert_allclose(updated["hidden.0.gamma"], 0.9995, rtol=1e-15)
    np.testing.assert_array_equal(params["hidden.0.gamma"], 1.0)


def test_two_steps_equal_one_doubled_step(desk_mlp_config, rng):
    params = _params(desk_mlp_config)
    grads = {name: rng.normal(size=params[name].shape) for name in params.trainable_names}
    twice = sgd_update(sgd_update(params, grads, 0.01), grads, 0.01)
    once = sgd_update(params, grads, 0.02)
    for name in params.trainable_names:
        np.testing.assert_allclose(twice[name], once[name], rtol=1e-12, atol=1e-15)


def test_non_finite_gradient_names_the_block(desk_mlp_config):
    params = _params(desk_mlp_config)
    grads = _grads_like(params)
    grads["hidden.1.gamma"][2] = np.nan
    with pytest.raises(TrainingError, match="hidden.1.gamma"):
        sgd_update(params, grads, 0.01)


def test_negative_learning_rate_rejected(desk_mlp_config):
    params = _params(desk_mlp_config)
    with pytest.raises(DataValidationError):
        sgd_update(params, _grads_like(params), -0.1)
