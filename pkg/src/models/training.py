"""
Epoch-based SGD training with random-location pseudo-absences.

Every step runs one train-mode forward on the observed batch and, for the
losses that use it, one on a freshly sampled batch of random locations. The
two forwards normalise over their own rows.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from src.data_collection.env_grid import EnvGrid
from src.models.checkpoint import save_checkpoint
from src.models.location_encoding import LocationEncoderConfig, encoder_dim
from src.models.losses import LossBatchInput, LossConfig, check_weights_regular, compute_loss
from src.models.mlp import MlpConfig, Parameters, add_gradients, backward, forward, init_params, sgd_update
from src.preprocessing.dataset import SpeciesCatalog, TrainingSet, assemble_features
from src.utils.errors import DataValidationError, ShapeMismatchError, TrainingError
from src.utils.seeding import derive_seed

logger = logging.getLogger(__name__)

HISTORY_FILE = "history.csv"
TIMINGS_FILE = "timings.csv"
FINAL_CHECKPOINT = "checkpoint.bin"

ValidateFn = Callable[[Parameters, int], Dict[str, float]]


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(150, ge=1)
    lr: float = Field(0.001, gt=0)
    batch_size: int = Field(256, ge=2)
    loss: LossConfig = Field(default_factory=LossConfig)
    seed: int = Field(0, ge=0)
    init_seed: Optional[int] = Field(None, ge=0)
    shuffle_seed: Optional[int] = Field(None, ge=0)
    pa_seed: Optional[int] = Field(None, ge=0)
    checkpoint_interval: int = Field(0, ge=0)
    show_progress: bool = True

    def seed_for(self, purpose: str) -> int:
        override = getattr(self, f"{purpose}_seed")
        return override if override is not None else derive_seed(self.seed, purpose)


@dataclass
class TrainHistory:
    epochs: List[int] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)
    validation: Dict[str, List[float]] = field(default_factory=dict)

    def record(self, epoch: int, loss: float, seconds: float, metrics: Optional[Dict[str, float]] = None):
        self.epochs.append(epoch)
        self.losses.append(loss)
        self.seconds.append(seconds)
        for name, value in (metrics or {}).items():
            self.validation.setdefault(name, []).append(float(value))

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"epoch": self.epochs, "loss": self.losses})
        for name, values in self.validation.items():
            frame[name] = values
        return frame

    def timings_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"epoch": self.epochs, "seconds": self.seconds})

    def save(self, output_dir: Union[str, Path]) -> Tuple[Path, Path]:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        history_path = output_dir / HISTORY_FILE
        timings_path = output_dir / TIMINGS_FILE
        self.to_frame().to_csv(history_path, index=False, float_format="%.17g")
        self.timings_frame().to_csv(timings_path, index=False, float_format="%.6f")
        return history_path, timings_path


# ============================================================================
# PSEUDO-ABSENCES
# ============================================================================

def sample_random_locations(
    batch_size: int,
    grid: EnvGrid,
    encoder: Optional[LocationEncoderConfig],
    rng: np.random.Generator,
) -> np.ndarray:
    """Uniform cell, uniform point inside it, features assembled like observed samples."""
    if batch_size < 1:
        raise DataValidationError(f"batch_size must be >= 1, got {batch_size}")
    cells = rng.integers(0, grid.n_cells, size=batch_size)
    lons, lats = grid.jitter_in_cells(cells, rng)
    return assemble_features(grid, lons, lats, encoder)


# ============================================================================
# STEP
# ============================================================================

def train_step(
    params: Parameters,
    batch: TrainingSet,
    pa_batch: Optional[np.ndarray],
    loss_config: LossConfig,
    catalog: SpeciesCatalog,
    lr: float,
) -> Tuple[Parameters, float]:
    """
    One SGD step. Returns the updated parameters and the loss before the update.

    `params` is left untouched; the returned parameters carry the running
    statistics updated by this step's forwards.
    """
    if len(batch) < 2:
        raise DataValidationError(f"train step needs at least 2 samples, got {len(batch)}")
    uses_pa = loss_config.uses_random_locations
    if uses_pa and (pa_batch is None or len(pa_batch) != len(batch)):
        raise DataValidationError("pseudo-absence batch must match the observed batch size")

    working = params.with_own_buffers()
    loss, grads = loss_and_gradients(
        working,
        batch.features,
        batch.positives,
        pa_batch if uses_pa else None,
        loss_config,
        catalog.weights if loss_config.kind == "full_weighted" else None,
    )
    return sgd_update(working, grads, lr), loss


def loss_and_gradients(
    params: Parameters,
    features: np.ndarray,
    positives: np.ndarray,
    pa_features: Optional[np.ndarray],
    loss_config: LossConfig,
    weights: Optional[np.ndarray] = None,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Loss of the composed network and its exact gradient. Updates the running statistics of `params`."""
    yhat, cache = forward(params, features, mode="train")
    yhat_prime, pa_cache = (None, None)
    if pa_features is not None:
        yhat_prime, pa_cache = forward(params, pa_features, mode="train")
    if not np.all(np.isfinite(yhat)) or (yhat_prime is not None and not np.all(np.isfinite(yhat_prime))):
        raise TrainingError("non-finite predictions (parameters diverged)")

    batch = LossBatchInput(
        yhat=yhat,
        positives=positives,
        yhat_prime=yhat_prime,
        weights=weights,
        logits=cache.logits,
        logits_prime=pa_cache.logits if pa_cache is not None else None,
    )
    result = compute_loss(loss_config, batch)
    if not np.isfinite(result.loss):
        raise TrainingError(f"non-finite loss ({result.loss})")

    grads = backward(params, cache, result.grad_logits)
    if pa_cache is not None and result.grad_logits_prime is not None:
        grads = add_gradients(grads, backward(params, pa_cache, result.grad_logits_prime))
    return result.loss, grads


def batch_slices(n_samples: int, batch_size: int) -> List[Tuple[int, int]]:
    """Contiguous [start, end) ranges; a trailing single-row batch joins the one before it."""
    if n_samples < 2:
        raise DataValidationError(f"training needs at least 2 samples, got {n_samples}")
    slices = [(start, min(start + batch_size, n_samples)) for start in range(0, n_samples, batch_size)]
    if len(slices) > 1 and slices[-1][1] - slices[-1][0] == 1:
        last = slices.pop()
        slices[-1] = (slices[-1][0], last[1])
    return slices


# ============================================================================
# LOOP
# ============================================================================

def training_metadata(
    train_config: TrainConfig, catalog: SpeciesCatalog, grid: EnvGrid, encoder: Optional[LocationEncoderConfig]
) -> Dict[str, Any]:
    return {
        "loss": train_config.loss.model_dump(by_alias=True),
        "epochs": train_config.epochs,
        "lr": train_config.lr,
        "batch_size": train_config.batch_size,
        "seed": train_config.seed,
        "location_encoding": encoder.kind if encoder is not None else None,
        "n_env_features": grid.n_features,
        "n_train_samples": int(catalog.n),
    }


def train(
    dataset: TrainingSet,
    catalog: SpeciesCatalog,
    grid: EnvGrid,
    model_config: MlpConfig,
    train_config: TrainConfig,
    encoder: Optional[LocationEncoderConfig] = None,
    output_dir: Optional[Union[str, Path]] = None,
    validate: Optional[ValidateFn] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> Tuple[Parameters, TrainHistory]:
    """
    Train from a fresh initialisation.

    With `output_dir` set, writes periodic checkpoints
    (checkpoint_epoch_NNNN.bin every `checkpoint_interval` epochs), the final
    checkpoint.bin, history.csv and timings.csv.
    """
    n = len(dataset)
    if n < 2:
        raise DataValidationError(f"training needs at least 2 samples, got {n}")
    expected_dim = encoder_dim(encoder) + grid.n_features
    if dataset.input_dim != expected_dim or model_config.input_dim != expected_dim:
        raise ShapeMismatchError(
            f"input width mismatch: dataset D={dataset.input_dim}, model D={model_config.input_dim}, "
            f"grid + encoder D={expected_dim}"
        )
    if model_config.output_dim != catalog.n_species or dataset.n_species != catalog.n_species:
        raise ShapeMismatchError(f"model predicts S={model_config.output_dim}, catalog has S={catalog.n_species}")

    loss_config = train_config.loss
    if loss_config.kind == "full_weighted":
        check_weights_regular(catalog.weights)

    params = init_params(model_config, np.random.default_rng(train_config.seed_for("init")))
    shuffle_rng = np.random.default_rng(train_config.seed_for("shuffle"))
    pa_rng = np.random.default_rng(train_config.seed_for("pa"))
    slices = batch_slices(n, train_config.batch_size)

    meta = {**training_metadata(train_config, catalog, grid, encoder), **(metadata or {})}
    out = Path(output_dir) if output_dir is not None else None
    history = TrainHistory()
    label = loss_config.label()
    logger.info(
        "[TRAIN] %s: %d samples, %d steps/epoch, %d epochs, L=%d H=%d",
        label, n, len(slices), train_config.epochs, model_config.hidden_layers, model_config.hidden_width,
    )

    epochs = tqdm(
        range(1, train_config.epochs + 1), desc=f"train {label}", unit="epoch", disable=not train_config.show_progress
    )
    for epoch in epochs:
        started = time.perf_counter()
        order = shuffle_rng.permutation(n)
        step_losses, step_sizes = [], []
        for step, (start, end) in enumerate(slices):
            batch = dataset.take(order[start:end])
            pa_batch = (
                sample_random_locations(len(batch), grid, encoder, pa_rng) if loss_config.uses_random_locations else None
            )
            try:
                params, loss = train_step(params, batch, pa_batch, loss_config, catalog, train_config.lr)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, step {step}: {exc}") from exc
            step_losses.append(loss)
            step_sizes.append(len(batch))

        epoch_loss = float(np.average(step_losses, weights=step_sizes))
        metrics = validate(params, epoch) if validate is not None else None
        history.record(epoch, epoch_loss, time.perf_counter() - started, metrics)
        epochs.set_postfix(loss=f"{epoch_loss:.4f}")
        logger.debug("[TRAIN] epoch %d/%d loss %.6f", epoch, train_config.epochs, epoch_loss)

        if out is not None and train_config.checkpoint_interval and epoch % train_config.checkpoint_interval == 0:
            save_checkpoint(params, out / f"checkpoint_epoch_{epoch:04d}.bin", {**meta, "epoch": epoch})

    logger.info("[TRAIN] %s finished: first epoch loss %.6f, final %.6f", label, history.losses[0], history.final_loss)
    if out is not None:
        save_checkpoint(params, out / FINAL_CHECKPOINT, {**meta, "epoch": train_config.epochs})
        history.save(out)
    return params, history
