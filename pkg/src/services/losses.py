"""Depth distribution focal loss and total loss composition."""

from typing import Any, Dict, Union
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.utils.constants import (
    DEFAULT_ALPHA_BG,
    DEFAULT_ALPHA_FG,
    DEFAULT_GAMMA,
    DEFAULT_LAMBDA_CLS,
    DEFAULT_LAMBDA_DEPTH,
    DEFAULT_LAMBDA_DIR,
    DEFAULT_LAMBDA_REG,
    PROBABILITY_EPS,
)
from src.utils.validators import (
    NonFiniteInput,
    ShapeMismatch,
    validate_rank,
    validate_same_shape,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


class LossWeights(BaseModel):
    """Focal loss parameters and total-loss weights."""

    model_config = ConfigDict(frozen=True)

    alpha_fg: float = Field(default=DEFAULT_ALPHA_FG, ge=0.0)
    alpha_bg: float = Field(default=DEFAULT_ALPHA_BG, ge=0.0)
    gamma: float = Field(default=DEFAULT_GAMMA, ge=0.0)
    lambda_depth: float = Field(default=DEFAULT_LAMBDA_DEPTH, ge=0.0)
    lambda_cls: float = Field(default=DEFAULT_LAMBDA_CLS, ge=0.0)
    lambda_reg: float = Field(default=DEFAULT_LAMBDA_REG, ge=0.0)
    lambda_dir: float = Field(default=DEFAULT_LAMBDA_DIR, ge=0.0)


def focal_term(p_t: ArrayLike, alpha: ArrayLike, gamma: float) -> ArrayLike:
    """
    Focal loss of the probability assigned to the true class.

    -alpha * (1 - p_t)^gamma * ln(p_t), with p_t clamped below at 1e-9.

    Args:
        p_t: Probability (or array of probabilities) at the true bin
        alpha: Weighting factor (scalar or broadcastable array)
        gamma: Focusing exponent

    Returns:
        Loss with the broadcast shape of the inputs (float for scalars)
    """
    p = np.maximum(np.asarray(p_t, dtype=np.float64), PROBABILITY_EPS)
    loss = -np.asarray(alpha, dtype=np.float64) * (1.0 - p) ** gamma * np.log(p)
    return float(loss) if loss.ndim == 0 else loss


def _focal_derivative(p_t: np.ndarray, alpha: np.ndarray, gamma: float) -> np.ndarray:
    """d/dp of the focal term; zero where the clamp is active."""
    clamped = p_t < PROBABILITY_EPS
    p = np.maximum(p_t, PROBABILITY_EPS)
    one_minus = 1.0 - p
    if gamma == 0:
        power_term = np.zeros_like(p)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            power_term = np.where(
                one_minus > 0, gamma * one_minus ** (gamma - 1.0) * np.log(p), 0.0
            )
    derivative = alpha * (power_term - one_minus ** gamma / p)
    return np.where(clamped, 0.0, derivative)


def _gather_true_probabilities(
    dist: np.ndarray,
    labels: np.ndarray,
    fg: np.ndarray,
    weights: LossWeights
) -> tuple:
    validate_rank(dist, 3, "dist")
    validate_same_shape(dist, labels, ("dist", "labels"))
    fg = np.asarray(fg, dtype=bool)
    if fg.shape != dist.shape[:2]:
        raise ShapeMismatch(f"Foreground mask {fg.shape} vs distribution {dist.shape[:2]}")
    hot = np.argmax(labels, axis=-1)
    p_t = np.take_along_axis(np.asarray(dist, dtype=np.float64), hot[..., None], axis=-1)[..., 0]
    alpha = np.where(fg, weights.alpha_fg, weights.alpha_bg)
    return hot, p_t, alpha


def depth_loss(
    dist: np.ndarray,
    labels: np.ndarray,
    fg: np.ndarray,
    weights: LossWeights = LossWeights()
) -> float:
    """
    Mean focal loss over all W_F x H_F pixels.

    The overflow bin participates like any other bin.

    Args:
        dist: W_F x H_F x K predicted distribution
        labels: W_F x H_F x K one-hot labels
        fg: W_F x H_F foreground mask
        weights: Loss weights

    Returns:
        Scalar loss
    """
    _, p_t, alpha = _gather_true_probabilities(dist, labels, fg, weights)
    losses = focal_term(p_t, alpha, weights.gamma)
    # np.sum uses pairwise summation: fixed order, reproducible
    return float(np.sum(losses) / p_t.size)


def depth_loss_backward(
    dist: np.ndarray,
    labels: np.ndarray,
    fg: np.ndarray,
    weights: LossWeights = LossWeights()
) -> np.ndarray:
    """
    Gradient of `depth_loss` with respect to the distribution values.

    Only each pixel's hot bin receives a nonzero gradient.

    Returns:
        Array with the shape of `dist`, float64 if `dist` is float64 else float32
    """
    hot, p_t, alpha = _gather_true_probabilities(dist, labels, fg, weights)
    grad = np.zeros(dist.shape, dtype=np.float64)
    per_pixel = _focal_derivative(p_t, alpha, weights.gamma) / p_t.size
    np.put_along_axis(grad, hot[..., None], per_pixel[..., None], axis=-1)
    dtype = np.float64 if np.asarray(dist).dtype == np.float64 else np.float32
    return grad.astype(dtype)


def total_loss(
    l_depth: float,
    l_cls: float,
    l_reg: float,
    l_dir: float,
    weights: LossWeights = LossWeights()
) -> float:
    """
    Weighted combination of the depth and detection losses.

    Raises:
        NonFiniteInput: If any component is NaN or infinite
    """
    components = np.array([l_depth, l_cls, l_reg, l_dir], dtype=np.float64)
    if not np.all(np.isfinite(components)):
        raise NonFiniteInput(f"Loss components must be finite, got {components.tolist()}")
    return float(
        weights.lambda_depth * l_depth
        + weights.lambda_cls * l_cls
        + weights.lambda_reg * l_reg
        + weights.lambda_dir * l_dir
    )


def loss_breakdown(
    dist: np.ndarray,
    labels: np.ndarray,
    fg: np.ndarray,
    weights: LossWeights = LossWeights()
) -> Dict[str, Any]:
    """Depth loss split by foreground/background contributions."""
    _, p_t, alpha = _gather_true_probabilities(dist, labels, fg, weights)
    losses = focal_term(p_t, alpha, weights.gamma)
    fg_mask = np.asarray(fg, dtype=bool)
    return {
        "depth_loss": float(np.sum(losses) / p_t.size),
        "foreground_pixels": int(fg_mask.sum()),
        "background_pixels": int((~fg_mask).sum()),
        "foreground_sum": float(np.sum(losses[fg_mask])),
        "background_sum": float(np.sum(losses[~fg_mask])),
    }
