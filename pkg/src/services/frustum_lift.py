"""Categorical depth distributions and the frustum lift (per-pixel outer product).

Distributions are W_F x H_F x K arrays whose last axis holds depth-bin
probabilities; frustum grids are W_F x H_F x D x C.
"""

from typing import Tuple
import logging

import numpy as np

from src.utils.constants import LiftMode
from src.utils.validators import (
    ShapeMismatch,
    validate_bin_count,
    validate_finite,
    validate_leading_dims,
    validate_rank,
    validate_same_shape,
)

logger = logging.getLogger(__name__)


def _float_dtype(*arrays: np.ndarray) -> np.dtype:
    """float64 if any input is float64, else float32."""
    if any(np.asarray(a).dtype == np.float64 for a in arrays):
        return np.dtype(np.float64)
    return np.dtype(np.float32)


def softmax_normalize(logits: np.ndarray) -> np.ndarray:
    """
    Per-pixel softmax over the last axis, stabilized by max subtraction.

    Args:
        logits: W_F x H_F x K logits

    Returns:
        Distribution with the dtype of the logits (float32 unless float64)

    Raises:
        NonFiniteInput: If any logit is NaN or infinite
    """
    logits = np.asarray(logits)
    validate_finite(logits, "logits")
    dtype = _float_dtype(logits)
    shifted = logits.astype(np.float64) - logits.max(axis=-1, keepdims=True)
    exponentials = np.exp(shifted)
    dist = exponentials / exponentials.sum(axis=-1, keepdims=True)
    return dist.astype(dtype)


def softmax_backward(dist: np.ndarray, upstream_grad: np.ndarray) -> np.ndarray:
    """
    Softmax Jacobian-vector product per pixel.

    grad_l[k] = dist[k] * (upstream[k] - sum_j upstream[j] * dist[j])

    Args:
        dist: Softmax output
        upstream_grad: Gradient with respect to the softmax output

    Returns:
        Gradient with respect to the logits
    """
    validate_same_shape(dist, upstream_grad, ("dist", "upstream_grad"))
    dtype = _float_dtype(dist, upstream_grad)
    p = np.asarray(dist, dtype=np.float64)
    g = np.asarray(upstream_grad, dtype=np.float64)
    inner = np.sum(g * p, axis=-1, keepdims=True)
    return (p * (g - inner)).astype(dtype)


def drop_overflow_bin(dist: np.ndarray, num_bins: int) -> np.ndarray:
    """
    Remove the trailing overflow bin without renormalizing.

    Probability assigned to out-of-range depths vanishes from the frustum.

    Args:
        dist: Distribution with num_bins + 1 bins
        num_bins: D, the in-range bin count

    Returns:
        Copy holding the first D bins

    Raises:
        WrongBinCount: If the distribution does not have D + 1 bins
    """
    validate_bin_count(dist, num_bins + 1)
    return np.array(dist[..., :num_bins])


def drop_overflow_bin_backward(upstream_grad: np.ndarray) -> np.ndarray:
    """Adjoint of the overflow slice: zero gradient for the dropped bin."""
    pad = [(0, 0)] * (upstream_grad.ndim - 1) + [(0, 1)]
    return np.pad(upstream_grad, pad)


def lift(dist: np.ndarray, features: np.ndarray) -> np.ndarray:
    """
    Weight each feature pixel by its depth probabilities.

    G[u, v, d, c] = dist[u, v, d] * features[u, v, c]

    Args:
        dist: W_F x H_F x D distribution (overflow bin already removed)
        features: W_F x H_F x C image features

    Returns:
        Frustum grid W_F x H_F x D x C

    Raises:
        ShapeMismatch: If the spatial extents differ
    """
    validate_rank(dist, 3, "dist")
    validate_rank(features, 3, "features")
    validate_leading_dims(dist, features, 2, ("dist", "features"))
    dtype = _float_dtype(dist, features)
    frustum = np.einsum("uvd,uvc->uvdc", dist.astype(dtype), features.astype(dtype))
    logger.debug(f"Lifted features {features.shape} into frustum {frustum.shape}")
    return frustum


def lift_backward(
    dist: np.ndarray,
    features: np.ndarray,
    upstream_grad: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gradients of the lift with respect to the distribution and the features.

    Args:
        dist: W_F x H_F x D distribution
        features: W_F x H_F x C features
        upstream_grad: W_F x H_F x D x C gradient of the frustum

    Returns:
        (grad_dist, grad_features)
    """
    validate_leading_dims(dist, features, 2, ("dist", "features"))
    expected = dist.shape + features.shape[-1:]
    if upstream_grad.shape != expected:
        raise ShapeMismatch(f"upstream_grad {upstream_grad.shape} vs expected {expected}")
    dtype = _float_dtype(dist, features, upstream_grad)
    g = upstream_grad.astype(np.float64)
    grad_dist = np.einsum("uvdc,uvc->uvd", g, features.astype(np.float64))
    grad_features = np.einsum("uvdc,uvd->uvc", g, dist.astype(np.float64))
    return grad_dist.astype(dtype), grad_features.astype(dtype)


def argmax_one_hot(dist: np.ndarray) -> np.ndarray:
    """Replace each pixel's distribution with a one-hot at its most probable bin."""
    hot = np.argmax(dist, axis=-1)
    return (np.arange(dist.shape[-1]) == hot[..., None]).astype(dist.dtype)


def repeat_lift(features: np.ndarray, num_bins: int) -> np.ndarray:
    """Copy every feature pixel to all depth bins (no depth weighting)."""
    validate_rank(features, 3, "features")
    return np.repeat(features[:, :, None, :], num_bins, axis=2)


def lift_with_mode(
    dist: np.ndarray,
    features: np.ndarray,
    mode: LiftMode = LiftMode.DISTRIBUTION
) -> np.ndarray:
    """
    Build a frustum grid with one of the lift variants.

    Args:
        dist: W_F x H_F x D distribution (overflow bin removed)
        features: W_F x H_F x C features
        mode: DISTRIBUTION (outer product), REPEAT or ARGMAX

    Returns:
        Frustum grid W_F x H_F x D x C
    """
    mode = LiftMode(mode)
    if mode == LiftMode.REPEAT:
        validate_leading_dims(dist, features, 2, ("dist", "features"))
        return repeat_lift(features, dist.shape[-1]).astype(_float_dtype(dist, features))
    if mode == LiftMode.ARGMAX:
        return lift(argmax_one_hot(dist), features)
    return lift(dist, features)
