"""Distribution entropy analysis and finite-difference gradient checking."""

import csv
import io
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Union
import logging

import numpy as np

from src.services.frustum_lift import (
    drop_overflow_bin,
    drop_overflow_bin_backward,
    lift,
    lift_backward,
    softmax_backward,
    softmax_normalize,
)
from src.services.grid_transform import trilinear_sample, trilinear_sample_backward
from src.services.losses import LossWeights, depth_loss, depth_loss_backward
from src.utils.constants import (
    CI95_Z,
    ENTROPY_CSV_HEADER,
    GRADCHECK_DENOMINATOR_FLOOR,
    GRADCHECK_STEP_FLOOR,
    NORMALIZATION_TOLERANCE,
    PixelGroup,
    ERROR_NOT_NORMALIZED,
)
from src.utils.validators import (
    NonFiniteEvaluation,
    NotNormalized,
    ShapeMismatch,
    validate_same_shape,
)

logger = logging.getLogger(__name__)

GradientSource = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


def _xlogx(p: np.ndarray) -> np.ndarray:
    safe = np.where(p > 0, p, 1.0)
    return np.where(p > 0, p * np.log(safe), 0.0)


def _check_normalized(p: np.ndarray) -> None:
    totals = p.sum(axis=-1)
    bad = (np.abs(totals - 1.0) > NORMALIZATION_TOLERANCE) | np.any(p < 0, axis=-1)
    if np.any(bad):
        raise NotNormalized(ERROR_NOT_NORMALIZED.format(total=float(np.ravel(totals[bad])[0])))


def shannon_entropy(dist: np.ndarray) -> float:
    """
    Entropy in nats of a probability vector; 0 ln 0 counts as 0.

    Raises:
        NotNormalized: If entries are negative or the sum deviates from 1 by > 1e-3
    """
    p = np.asarray(dist, dtype=np.float64).reshape(-1)
    _check_normalized(p)
    return float(-np.sum(_xlogx(p)))


def pixel_entropies(dist: np.ndarray) -> np.ndarray:
    """Per-pixel entropy (nats) of a ... x K distribution."""
    p = np.asarray(dist, dtype=np.float64)
    _check_normalized(p)
    return -np.sum(_xlogx(p), axis=-1)


@dataclass
class EntropyRow:
    """Entropy statistics of one (ground-truth bin, pixel group) population."""

    gt_bin: int
    group: PixelGroup
    count: int
    mean_entropy: float
    ci_low: float
    ci_high: float

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "gt_bin": self.gt_bin,
            "group": self.group.value,
            "count": self.count,
            "mean_entropy": self.mean_entropy,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
        }


@dataclass
class EntropyReport:
    """Entropy rows ordered by ground-truth bin, then group."""

    rows: List[EntropyRow] = field(default_factory=list)

    @property
    def total_count(self) -> int:
        return sum(row.count for row in self.rows)

    def to_csv(self) -> str:
        """Render with the header gt_bin,group,count,mean_entropy,ci_low,ci_high."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(ENTROPY_CSV_HEADER)
        for row in self.rows:
            writer.writerow(
                [
                    row.gt_bin,
                    row.group.value,
                    row.count,
                    f"{row.mean_entropy:.9g}",
                    f"{row.ci_low:.9g}",
                    f"{row.ci_high:.9g}",
                ]
            )
        return buffer.getvalue()


def entropy_report(dists: np.ndarray, labels: np.ndarray, fg: np.ndarray) -> EntropyReport:
    """
    Group pixel entropies by ground-truth bin and foreground flag.

    Each group reports its mean entropy and a normal-approximation 95%
    interval (mean +/- 1.96 * stdev / sqrt(n)); groups with fewer than two
    pixels report an interval equal to the mean.

    Args:
        dists: W_F x H_F x K predicted distributions
        labels: W_F x H_F x K one-hot labels
        fg: W_F x H_F foreground mask

    Returns:
        EntropyReport
    """
    validate_same_shape(dists, labels, ("dists", "labels"))
    fg = np.asarray(fg, dtype=bool)
    if fg.shape != dists.shape[:-1]:
        raise ShapeMismatch(f"Foreground mask {fg.shape} vs distributions {dists.shape[:-1]}")

    entropies = pixel_entropies(dists).reshape(-1)
    gt_bins = np.argmax(labels, axis=-1).reshape(-1)
    flags = fg.reshape(-1)

    rows = []
    for gt_bin in np.unique(gt_bins):
        for group, selector in (
            (PixelGroup.BACKGROUND, ~flags),
            (PixelGroup.FOREGROUND, flags),
        ):
            values = entropies[(gt_bins == gt_bin) & selector]
            if values.size == 0:
                continue
            mean = float(np.mean(values))
            if values.size < 2:
                low = high = mean
            else:
                half_width = CI95_Z * float(np.std(values, ddof=1)) / np.sqrt(values.size)
                low, high = mean - half_width, mean + half_width
            rows.append(EntropyRow(int(gt_bin), group, int(values.size), mean, low, high))

    logger.info(f"Entropy report: {len(rows)} groups over {entropies.size} pixels")
    return EntropyReport(rows=rows)


def gradcheck(
    f: Callable[[np.ndarray], float],
    analytic_grad: GradientSource,
    x: np.ndarray,
    eps: float = 1e-3
) -> float:
    """
    Compare an analytic gradient with central finite differences.

    The step for coordinate i is eps * max(|x_i|, 1e-2).

    Args:
        f: Scalar function of an array
        analytic_grad: Gradient array, or a callable returning it at x
        x: Evaluation point (converted to float64)
        eps: Relative step

    Returns:
        max_i |g_num - g_an| / max(|g_num|, |g_an|, 1e-8)

    Raises:
        NonFiniteEvaluation: If f or the analytic gradient is not finite
    """
    x = np.array(x, dtype=np.float64)
    analytic = analytic_grad(x.copy()) if callable(analytic_grad) else analytic_grad
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x.shape:
        raise ShapeMismatch(f"Analytic gradient {analytic.shape} vs input {x.shape}")
    if not np.all(np.isfinite(analytic)):
        raise NonFiniteEvaluation("Analytic gradient is not finite")

    numeric = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_numeric = numeric.reshape(-1)
    for i in range(flat_x.size):
        original = flat_x[i]
        step = eps * max(abs(original), GRADCHECK_STEP_FLOOR)
        flat_x[i] = original + step
        f_plus = f(x)
        flat_x[i] = original - step
        f_minus = f(x)
        flat_x[i] = original
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteEvaluation(f"f is not finite around coordinate {i}")
        # the realized step differs slightly from `step` after rounding
        flat_numeric[i] = (f_plus - f_minus) / ((original + step) - (original - step))

    denominator = np.maximum(
        np.maximum(np.abs(numeric), np.abs(analytic)), GRADCHECK_DENOMINATOR_FLOOR
    )
    return float(np.max(np.abs(numeric - analytic) / denominator)) if x.size else 0.0


@dataclass
class GradcheckResult:
    """Outcome of one gradient check."""

    name: str
    max_relative_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error <= self.tolerance

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "name": self.name,
            "max_relative_error": self.max_relative_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def _one_hot(rng: np.random.Generator, shape: tuple, bins: int) -> np.ndarray:
    hot = rng.integers(0, bins, size=shape)
    return (np.arange(bins) == hot[..., None]).astype(np.float64)


def run_gradcheck_suite(
    seed: int = 0,
    eps: float = 1e-3,
    tolerance: float = 1e-4,
    width: int = 3,
    height: int = 3,
    num_bins: int = 4,
    channels: int = 2
) -> List[GradcheckResult]:
    """
    Gradient-check every backward operation and the composed depth pipeline.

    All checks run in float64 on small random instances.

    Args:
        seed: Random seed
        eps: Relative central-difference step
        tolerance: Maximum accepted relative error
        width: W_F
        height: H_F
        num_bins: D (the overflow bin is added on top)
        channels: C

    Returns:
        One GradcheckResult per check
    """
    rng = np.random.default_rng(seed)
    W, H, D, C = width, height, num_bins, channels
    K = D + 1
    weights = LossWeights()

    logits = rng.uniform(-0.1, 0.1, size=(W, H, K))
    features = rng.normal(size=(W, H, C))
    upstream_dist = rng.normal(size=(W, H, K))
    upstream_frustum = rng.normal(size=(W, H, D, C))
    labels = _one_hot(rng, (W, H), K)
    fg = rng.random((W, H)) < 0.5
    dist_d = rng.dirichlet(np.ones(D), size=(W, H))
    loss_dist = softmax_normalize(rng.uniform(-1.0, 1.0, size=(W, H, K)))

    frustum = rng.normal(size=(W, H, D, C))
    points = 20
    coords = np.column_stack(
        [rng.uniform(0, W - 1, points), rng.uniform(0, H - 1, points), rng.uniform(0, D - 1, points)]
    )
    mask = np.ones(points, dtype=bool)
    mask[::7] = False
    upstream_samples = rng.normal(size=(points, C))

    def composed(logit_values: np.ndarray, feature_values: np.ndarray) -> float:
        p = softmax_normalize(logit_values)
        frustum_values = lift(drop_overflow_bin(p, D), feature_values)
        return depth_loss(p, labels, fg, weights) + float(np.sum(frustum_values * upstream_frustum))

    def composed_grads(logit_values: np.ndarray, feature_values: np.ndarray) -> tuple:
        p = softmax_normalize(logit_values)
        grad_dist_d, grad_features = lift_backward(
            drop_overflow_bin(p, D), feature_values, upstream_frustum
        )
        grad_p = depth_loss_backward(p, labels, fg, weights) + drop_overflow_bin_backward(grad_dist_d)
        return softmax_backward(p, grad_p), grad_features

    checks: Dict[str, float] = {
        "softmax_backward": gradcheck(
            lambda l: float(np.sum(softmax_normalize(l) * upstream_dist)),
            lambda l: softmax_backward(softmax_normalize(l), upstream_dist),
            logits,
            eps,
        ),
        "lift_backward[dist]": gradcheck(
            lambda d: float(np.sum(lift(d, features) * upstream_frustum)),
            lambda d: lift_backward(d, features, upstream_frustum)[0],
            dist_d,
            eps,
        ),
        "lift_backward[features]": gradcheck(
            lambda F: float(np.sum(lift(dist_d, F) * upstream_frustum)),
            lambda F: lift_backward(dist_d, F, upstream_frustum)[1],
            features,
            eps,
        ),
        "trilinear_sample_backward": gradcheck(
            lambda G: float(np.sum(trilinear_sample(G, coords, mask) * upstream_samples)),
            lambda G: trilinear_sample_backward(G, coords, mask, upstream_samples),
            frustum,
            eps,
        ),
        "depth_loss_backward": gradcheck(
            lambda p: depth_loss(p, labels, fg, weights),
            lambda p: depth_loss_backward(p, labels, fg, weights),
            loss_dist,
            eps,
        ),
        "pipeline[logits]": gradcheck(
            lambda l: composed(l, features),
            lambda l: composed_grads(l, features)[0],
            logits,
            eps,
        ),
        "pipeline[features]": gradcheck(
            lambda F: composed(logits, F),
            lambda F: composed_grads(logits, F)[1],
            features,
            eps,
        ),
    }

    results = [GradcheckResult(name, error, tolerance) for name, error in checks.items()]
    for result in results:
        level = logging.INFO if result.passed else logging.WARNING
        logger.log(level, f"gradcheck {result.name}: {result.max_relative_error:.3e}")
    return results


def duplicate_feature_fraction(values: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """
    Fraction of valid sample pairs whose feature vectors are identical.

    Args:
        values: N x C sampled features (any leading shape is flattened)
        mask: Optional validity flags for the N samples

    Returns:
        sum_g n_g (n_g - 1) / 2 divided by N (N - 1) / 2 over groups g of equal rows
    """
    rows = np.asarray(values).reshape(-1, np.asarray(values).shape[-1])
    if mask is not None:
        rows = rows[np.asarray(mask, dtype=bool).reshape(-1)]
    count = rows.shape[0]
    if count < 2:
        return 0.0
    _, group_sizes = np.unique(rows, axis=0, return_counts=True)
    group_sizes = group_sizes.astype(np.float64)
    duplicate_pairs = np.sum(group_sizes * (group_sizes - 1.0)) / 2.0
    return float(duplicate_pairs / (count * (count - 1.0) / 2.0))
