"""
Presence-only losses for single-positive multi-label training.

For a row with positive species p, predictions y at the observed location
and y' at a random location, every loss here has the form

    -(1/S) [ a_p log y_p + sum_{s != p} b_s log(1 - y_s) + c sum_s log(1 - y'_s) ]

  bce            a = 1,            b = 1,                     no random term
  full           a = lambda,       b = 1,                     c = 1
  full_weighted  a = lambda1 w_p,  b = lambda2 / (1 - 1/w_s), c = 1 - lambda2

Batch losses are row means. Gradients are returned w.r.t. the (clamped)
predictions and w.r.t. the logits. The logit gradients are composed through
the sigmoid analytically (-a (1 - p) for the positive, b p and c p' for the
negatives), so they stay finite and non-zero for saturated outputs; the
trainer backpropagates those.
"""

from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit, logit

from src.utils.errors import DataValidationError, ShapeMismatchError, SingularWeightError


LossKind = Literal["bce", "full", "full_weighted"]


class LossConfig(BaseModel):
    """Loss kind and its hyperparameters. `lambda` is accepted as the key in files."""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    kind: LossKind = "full_weighted"
    lambda_: float = Field(2048.0, gt=0, alias="lambda")
    lambda1: float = Field(1.0, gt=0)
    lambda2: float = Field(0.5, ge=0.0, le=1.0)

    @property
    def uses_random_locations(self) -> bool:
        return self.kind != "bce"

    def label(self) -> str:
        if self.kind == "full_weighted":
            return f"full_weighted_l2_{self.lambda2:g}"
        return self.kind


@dataclass(frozen=True)
class LossBatchInput:
    """
    Clamped predictions, the positive species per row and, for the full
    losses, predictions at random locations. `logits` / `logits_prime` are
    the pre-sigmoid outputs; without them the logit gradients are taken at
    logit(yhat).
    """

    yhat: np.ndarray
    positives: np.ndarray
    yhat_prime: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    logits: Optional[np.ndarray] = None
    logits_prime: Optional[np.ndarray] = None

    def __post_init__(self):
        yhat = np.asarray(self.yhat, dtype=np.float64)
        if yhat.ndim != 2 or yhat.shape[0] < 1:
            raise ShapeMismatchError(f"yhat must be a non-empty (B, S) matrix, got shape {yhat.shape}")
        _check_open_unit(yhat, "yhat")
        positives = np.asarray(self.positives, dtype=np.int64)
        if positives.shape != (yhat.shape[0],):
            raise ShapeMismatchError(f"positives shape {positives.shape}, expected ({yhat.shape[0]},)")
        if positives.min() < 0 or positives.max() >= yhat.shape[1]:
            raise DataValidationError(f"positive species index outside [0, {yhat.shape[1]})")
        object.__setattr__(self, "yhat", yhat)
        object.__setattr__(self, "positives", positives)

        if self.yhat_prime is not None:
            prime = np.asarray(self.yhat_prime, dtype=np.float64)
            if prime.shape != yhat.shape:
                raise ShapeMismatchError(f"yhat_prime shape {prime.shape} differs from yhat shape {yhat.shape}")
            _check_open_unit(prime, "yhat_prime")
            object.__setattr__(self, "yhat_prime", prime)
        if self.weights is not None:
            weights = np.asarray(self.weights, dtype=np.float64)
            if weights.shape != (yhat.shape[1],):
                raise ShapeMismatchError(f"weights shape {weights.shape}, expected ({yhat.shape[1]},)")
            object.__setattr__(self, "weights", weights)

        for name, reference in (("logits", yhat), ("logits_prime", self.yhat_prime)):
            values = getattr(self, name)
            if values is None:
                continue
            if reference is None:
                raise DataValidationError(f"{name} given without the matching predictions")
            values = np.asarray(values, dtype=np.float64)
            if values.shape != reference.shape:
                raise ShapeMismatchError(f"{name} shape {values.shape} differs from prediction shape {reference.shape}")
            if not np.all(np.isfinite(values)):
                raise DataValidationError(f"{name} must be finite")
            object.__setattr__(self, name, values)

    @property
    def batch_size(self) -> int:
        return self.yhat.shape[0]

    @property
    def n_species(self) -> int:
        return self.yhat.shape[1]


def _check_open_unit(values: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(values)) or np.any(values <= 0.0) or np.any(values >= 1.0):
        raise DataValidationError(f"{name} must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class LossResult:
    loss: float
    grad_yhat: np.ndarray
    grad_logits: np.ndarray
    grad_yhat_prime: Optional[np.ndarray] = None
    grad_logits_prime: Optional[np.ndarray] = None


@dataclass(frozen=True)
class LossTerms:
    """Unweighted batch means of the three summands."""

    positive: float
    negative: float
    random: Optional[float]


def presence_only_terms(batch: LossBatchInput) -> LossTerms:
    B, S = batch.yhat.shape
    rows = np.arange(B)
    negatives = np.ones((B, S), dtype=bool)
    negatives[rows, batch.positives] = False

    positive = -np.log(batch.yhat[rows, batch.positives]).sum() / (B * S)
    negative = -np.log1p(-batch.yhat[negatives]).sum() / (B * S)
    random = None
    if batch.yhat_prime is not None:
        random = float(-np.log1p(-batch.yhat_prime).sum() / (B * S))
    return LossTerms(positive=float(positive), negative=float(negative), random=random)


def weighted_presence_loss(
    batch: LossBatchInput,
    positive_coef: Union[float, np.ndarray],
    negative_coef: Union[float, np.ndarray],
    random_coef: Optional[float],
) -> LossResult:
    """
    Shared kernel of all three losses. Coefficients may be scalars or per-species
    vectors; `random_coef=None` drops the random-location term entirely.
    """
    B, S = batch.yhat.shape
    rows = np.arange(B)
    pos_coef = np.broadcast_to(np.asarray(positive_coef, dtype=np.float64), (S,))
    neg_coef = np.broadcast_to(np.asarray(negative_coef, dtype=np.float64), (S,))

    is_positive = np.zeros((B, S), dtype=bool)
    is_positive[rows, batch.positives] = True
    row_pos_coef = pos_coef[batch.positives]

    y = batch.yhat
    log_pos = np.log(y[rows, batch.positives])
    log_neg = np.where(is_positive, 0.0, np.log1p(-y))
    row_total = row_pos_coef * log_pos + log_neg @ neg_coef

    scale = 1.0 / (B * S)
    grad_yhat = np.where(is_positive, -row_pos_coef[:, None] / y, neg_coef[None, :] / (1.0 - y)) * scale
    z = batch.logits if batch.logits is not None else logit(y)
    # 1 - sigmoid(z) as sigmoid(-z): exact for large positive logits
    grad_logits = np.where(is_positive, -row_pos_coef[:, None] * expit(-z), neg_coef[None, :] * expit(z)) * scale

    grad_prime = grad_logits_prime = None
    if random_coef is not None:
        if batch.yhat_prime is None:
            raise DataValidationError("this loss needs predictions at random locations (yhat_prime)")
        row_total = row_total + random_coef * np.log1p(-batch.yhat_prime).sum(axis=1)
        grad_prime = (random_coef * scale) / (1.0 - batch.yhat_prime)
        z_prime = batch.logits_prime if batch.logits_prime is not None else logit(batch.yhat_prime)
        grad_logits_prime = (random_coef * scale) * expit(z_prime)

    loss = -float(row_total.sum()) * scale
    return LossResult(
        loss=loss,
        grad_yhat=grad_yhat,
        grad_logits=grad_logits,
        grad_yhat_prime=grad_prime,
        grad_logits_prime=grad_logits_prime,
    )


def bce_loss(batch: LossBatchInput) -> LossResult:
    """Observed location only: the positive plus target-group background negatives."""
    return weighted_presence_loss(batch, 1.0, 1.0, None)


def full_loss(batch: LossBatchInput, lambda_: float = 2048.0) -> LossResult:
    if lambda_ <= 0:
        raise DataValidationError(f"lambda must be > 0, got {lambda_}")
    if batch.yhat_prime is None:
        raise DataValidationError("full loss needs predictions at random locations (yhat_prime)")
    return weighted_presence_loss(batch, lambda_, 1.0, 1.0)


def full_weighted_loss(batch: LossBatchInput, lambda1: float = 1.0, lambda2: float = 0.5) -> LossResult:
    if batch.weights is None:
        raise DataValidationError("full weighted loss needs species weights")
    if batch.yhat_prime is None:
        raise DataValidationError("full weighted loss needs predictions at random locations (yhat_prime)")
    if lambda1 <= 0 or not 0.0 <= lambda2 <= 1.0:
        raise DataValidationError(f"need lambda1 > 0 and lambda2 in [0, 1], got {lambda1}, {lambda2}")
    check_weights_regular(batch.weights)

    w = batch.weights
    return weighted_presence_loss(batch, lambda1 * w, lambda2 / (1.0 - 1.0 / w), 1.0 - lambda2)


def check_weights_regular(weights: np.ndarray) -> None:
    singular = np.flatnonzero(np.asarray(weights) <= 1.0)
    if singular.size:
        raise SingularWeightError(singular)


def compute_loss(config: LossConfig, batch: LossBatchInput) -> LossResult:
    if config.kind == "bce":
        return bce_loss(batch)
    if config.kind == "full":
        return full_loss(batch, config.lambda_)
    return full_weighted_loss(batch, config.lambda1, config.lambda2)
