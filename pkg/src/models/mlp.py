"""
Residual MLP with batch normalisation and per-species sigmoid outputs.

    h_0 = x W_in + b_in                                  (no residual)
    h_l = h_{l-1} + ReLU(BN_l(h_{l-1} W_l + b_l))        l = 1..L
    y   = clamp(sigmoid(h_L W_out + b_out), eps, 1 - eps)

Forward and backward passes are written out by hand in numpy. Weight
matrices are stored (fan_in, fan_out) so a layer is `x @ W + b`.
"""

from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit

from src.utils.errors import DataValidationError, ShapeMismatchError, TrainingError


PREDICTION_EPS = 1e-7

Mode = Literal["train", "eval"]


class MlpArchitecture(BaseModel):
    """Size of the network, independent of the data it is trained on."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    hidden_layers: int = Field(5, ge=1)
    hidden_width: int = Field(1000, ge=1)
    batchnorm_eps: float = Field(1e-5, gt=0)
    batchnorm_momentum: float = Field(0.1, ge=0.0, le=1.0)

    @classmethod
    def desk(cls) -> "MlpArchitecture":
        return cls(hidden_layers=2, hidden_width=64)

    @classmethod
    def full_size(cls) -> "MlpArchitecture":
        return cls(hidden_layers=5, hidden_width=1000)

    def for_data(self, input_dim: int, output_dim: int) -> "MlpConfig":
        return MlpConfig(input_dim=input_dim, output_dim=output_dim, **self.model_dump())


class MlpConfig(MlpArchitecture):
    input_dim: int = Field(ge=1)
    output_dim: int = Field(ge=1)


# ============================================================================
# PARAMETERS
# ============================================================================

def parameter_layout(config: MlpConfig) -> List[Tuple[str, Tuple[int, ...], bool]]:
    """Ordered (name, shape, trainable) for every block; this order is also the checkpoint order."""
    D, H, S = config.input_dim, config.hidden_width, config.output_dim
    layout = [("input.weight", (D, H), True), ("input.bias", (H,), True)]
    for layer in range(config.hidden_layers):
        prefix = f"hidden.{layer}"
        layout += [
            (f"{prefix}.weight", (H, H), True),
            (f"{prefix}.bias", (H,), True),
            (f"{prefix}.gamma", (H,), True),
            (f"{prefix}.beta", (H,), True),
            (f"{prefix}.running_mean", (H,), False),
            (f"{prefix}.running_var", (H,), False),
        ]
    layout += [("head.weight", (H, S), True), ("head.bias", (S,), True)]
    return layout


@dataclass
class Parameters:
    """All weights, biases, batch-norm scale/shift and running statistics, keyed by block name."""

    config: MlpConfig
    arrays: Dict[str, np.ndarray]

    def __post_init__(self):
        layout = parameter_layout(self.config)
        expected = [name for name, _, _ in layout]
        if list(self.arrays) != expected:
            missing = sorted(set(expected) - set(self.arrays))
            extra = sorted(set(self.arrays) - set(expected))
            if missing or extra:
                raise ShapeMismatchError(f"parameter blocks differ from the layout (missing {missing}, extra {extra})")
            self.arrays = {name: self.arrays[name] for name in expected}
        for name, shape, _ in layout:
            block = np.asarray(self.arrays[name], dtype=np.float64)
            if block.shape != shape:
                raise ShapeMismatchError(f"{name}: shape {block.shape}, expected {shape}")
            if not np.all(np.isfinite(block)):
                raise DataValidationError(f"{name}: non-finite values")
            self.arrays[name] = block
        for layer in range(self.config.hidden_layers):
            if np.any(self.arrays[f"hidden.{layer}.running_var"] < 0):
                raise DataValidationError(f"hidden.{layer}.running_var has negative entries")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    @property
    def trainable_names(self) -> List[str]:
        return [name for name, _, trainable in parameter_layout(self.config) if trainable]

    @property
    def buffer_names(self) -> List[str]:
        return [name for name, _, trainable in parameter_layout(self.config) if not trainable]

    def copy(self) -> "Parameters":
        return Parameters(self.config, {name: block.copy() for name, block in self.arrays.items()})

    def with_own_buffers(self) -> "Parameters":
        """Shares the trainable blocks, copies the running statistics."""
        buffers = set(self.buffer_names)
        return Parameters(
            self.config,
            {name: block.copy() if name in buffers else block for name, block in self.arrays.items()},
        )


def init_params(config: MlpConfig, rng: np.random.Generator) -> Parameters:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases, gamma=1, beta=0, running stats (0, 1)."""
    arrays: Dict[str, np.ndarray] = {}
    for name, shape, _ in parameter_layout(config):
        kind = name.rsplit(".", 1)[-1]
        if kind == "weight":
            arrays[name] = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
        elif kind in ("gamma", "running_var"):
            arrays[name] = np.ones(shape)
        else:
            arrays[name] = np.zeros(shape)
    return Parameters(config, arrays)


# ============================================================================
# FORWARD
# ============================================================================

@dataclass
class LayerCache:
    inputs: np.ndarray
    normalized: np.ndarray
    inv_std: np.ndarray
    bn_out: np.ndarray


@dataclass
class ForwardCache:
    mode: str
    inputs: np.ndarray
    layers: List[LayerCache]
    hidden_out: np.ndarray
    logits: np.ndarray

    @property
    def batch_size(self) -> int:
        return self.inputs.shape[0]


def _check_batch(params: Parameters, batch: np.ndarray, mode: str) -> np.ndarray:
    if mode not in ("train", "eval"):
        raise DataValidationError(f"mode must be 'train' or 'eval', got {mode!r}")
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.config.input_dim:
        raise ShapeMismatchError(f"batch shape {batch.shape}, expected (B, {params.config.input_dim})")
    if not np.all(np.isfinite(batch)):
        raise DataValidationError("non-finite input features")
    minimum = 2 if mode == "train" else 1
    if batch.shape[0] < minimum:
        raise DataValidationError(f"{mode}-mode forward needs at least {minimum} rows, got {batch.shape[0]}")
    return batch


def forward(params: Parameters, batch: np.ndarray, mode: Mode = "train") -> Tuple[np.ndarray, ForwardCache]:
    """
    Returns clamped predictions (B, S) and the cache for `backward`.

    Train mode normalises with batch statistics and updates the running
    statistics in place; eval mode uses the running statistics, so a row's
    output does not depend on its batchmates.
    """
    x = _check_batch(params, batch, mode)
    cfg = params.config
    h = x @ params["input.weight"] + params["input.bias"]

    layers: List[LayerCache] = []
    for layer in range(cfg.hidden_layers):
        p = f"hidden.{layer}"
        z = h @ params[f"{p}.weight"] + params[f"{p}.bias"]
        if mode == "train":
            mean = z.mean(axis=0)
            var = z.var(axis=0)
            batch_size = z.shape[0]
            m = cfg.batchnorm_momentum
            running_mean, running_var = params[f"{p}.running_mean"], params[f"{p}.running_var"]
            running_mean *= 1.0 - m
            running_mean += m * mean
            running_var *= 1.0 - m
            running_var += m * var * batch_size / (batch_size - 1)
        else:
            mean = params[f"{p}.running_mean"]
            var = params[f"{p}.running_var"]
        inv_std = 1.0 / np.sqrt(var + cfg.batchnorm_eps)
        normalized = (z - mean) * inv_std
        bn_out = params[f"{p}.gamma"] * normalized + params[f"{p}.beta"]
        layers.append(LayerCache(inputs=h, normalized=normalized, inv_std=inv_std, bn_out=bn_out))
        h = h + np.maximum(bn_out, 0.0)

    logits = h @ params["head.weight"] + params["head.bias"]
    predictions = np.clip(expit(logits), PREDICTION_EPS, 1.0 - PREDICTION_EPS)
    cache = ForwardCache(mode, x, layers, h, logits)
    return predictions, cache


def predict(params: Parameters, features: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    """Eval-mode predictions in chunks."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] == 0:
        return np.empty((0, params.config.output_dim))
    chunks = [
        forward(params, features[start:start + batch_size], mode="eval")[0]
        for start in range(0, features.shape[0], batch_size)
    ]
    return np.vstack(chunks)


# ============================================================================
# BACKWARD
# ============================================================================

def backward(params: Parameters, cache: ForwardCache, grad_logits: np.ndarray) -> Dict[str, np.ndarray]:
    """
    Gradients of the loss w.r.t. every trainable block, given dL/dz for the
    head logits z. Losses compose their gradient through the sigmoid
    themselves, so saturated outputs still pass a gradient. Batch-norm
    gradients flow through the batch mean and variance.
    """
    if cache.mode != "train":
        raise DataValidationError("backward needs the cache of a train-mode forward")
    d_logits = np.asarray(grad_logits, dtype=np.float64)
    if d_logits.shape != cache.logits.shape:
        raise ShapeMismatchError(
            f"gradient shape {d_logits.shape} does not match the cached batch {cache.logits.shape}"
        )
    if not np.all(np.isfinite(d_logits)):
        raise TrainingError("non-finite gradient w.r.t. logits")

    cfg = params.config
    grads: Dict[str, np.ndarray] = {}

    grads["head.weight"] = cache.hidden_out.T @ d_logits
    grads["head.bias"] = d_logits.sum(axis=0)
    d_h = d_logits @ params["head.weight"].T

    batch_size = cache.batch_size
    for layer in reversed(range(cfg.hidden_layers)):
        p = f"hidden.{layer}"
        lc = cache.layers[layer]
        d_bn = d_h * (lc.bn_out > 0.0)
        grads[f"{p}.gamma"] = np.sum(d_bn * lc.normalized, axis=0)
        grads[f"{p}.beta"] = d_bn.sum(axis=0)
        d_norm = d_bn * params[f"{p}.gamma"]
        d_z = (lc.inv_std / batch_size) * (
            batch_size * d_norm - d_norm.sum(axis=0) - lc.normalized * np.sum(d_norm * lc.normalized, axis=0)
        )
        grads[f"{p}.weight"] = lc.inputs.T @ d_z
        grads[f"{p}.bias"] = d_z.sum(axis=0)
        # residual branch plus the path through W_l
        d_h = d_h + d_z @ params[f"{p}.weight"].T

    grads["input.weight"] = cache.inputs.T @ d_h
    grads["input.bias"] = d_h.sum(axis=0)
    return {name: grads[name] for name in params.trainable_names}


def add_gradients(first: Dict[str, np.ndarray], second: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {name: first[name] + second[name] for name in first}


# ============================================================================
# OPTIMISER
# ============================================================================

def sgd_update(params: Parameters, grads: Dict[str, np.ndarray], lr: float) -> Parameters:
    """Plain SGD, theta <- theta - lr * g. Running statistics are copied unchanged."""
    if not np.isfinite(lr) or lr < 0:
        raise DataValidationError(f"learning rate must be a finite non-negative number, got {lr}")
    trainable = params.trainable_names
    if sorted(grads) != sorted(trainable):
        raise ShapeMismatchError("gradient blocks do not match the trainable parameters")

    updated: Dict[str, np.ndarray] = {}
    for name, block in params.arrays.items():
        if name not in grads:
            updated[name] = block.copy()
            continue
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != block.shape:
            raise ShapeMismatchError(f"{name}: gradient shape {grad.shape}, parameter shape {block.shape}")
        if not np.all(np.isfinite(grad)):
            raise TrainingError(f"non-finite gradient in parameter block {name}")
        updated[name] = block - lr * grad
    return Parameters(params.config, updated)
