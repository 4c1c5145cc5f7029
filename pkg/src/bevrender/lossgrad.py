"""Class-weighted cross-entropy on rendered class vectors and the analytic
backward pass into the grid logits.

Rendered vectors are used as-is (no renormalization), so mass lost to free
space or the out-of-bounds indicator implicitly penalizes empty
predictions. Density carries no gradient: the chain runs loss -> rendered
vector -> sampled cell probabilities -> softmax -> logits, weighted by the
(frozen) compositing weights. Out-of-bounds samples and dropped rays
contribute nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bevgrid import softmax_probs
from .errors import ConfigurationError, DataError, NoSupervisionError
from .kernels import get_kernels
from .renderer import RayBatch, RayIntegration


@dataclass(frozen=True)
class LossConfig:
    """Per-class positive weights and the log clamp floor."""

    class_weights: np.ndarray
    epsilon: float = 1e-6

    def __post_init__(self):
        w = np.asarray(self.class_weights, dtype=np.float64)
        object.__setattr__(self, "class_weights", w)
        if w.ndim != 1 or w.size < 2:
            raise ConfigurationError("class_weights must be a vector of length >= 2")
        if not (w > 0).all():
            raise ConfigurationError("class weights must be positive")
        if not (0 < self.epsilon <= 1e-3):
            raise ConfigurationError("epsilon must lie in (0, 1e-3]")

    @staticmethod
    def uniform(n_classes: int, epsilon: float = 1e-6) -> "LossConfig":
        return LossConfig(np.ones(n_classes), epsilon)


class GradBuffer:
    """Accumulated d(loss)/d(logit), float64, plus a contributing-ray count."""

    def __init__(self, rows: int, cols: int, n_classes: int):
        self.grad = np.zeros((rows, cols, n_classes))
        self.ray_count = 0

    @staticmethod
    def like(logits: np.ndarray) -> "GradBuffer":
        return GradBuffer(*logits.shape)


def weighted_ce(lhat: np.ndarray, target: int, cfg: LossConfig) -> float:
    """-w_target * log(max(lhat[target], epsilon))."""
    lhat = np.asarray(lhat, dtype=np.float64)
    if not 0 <= target < lhat.shape[-1]:
        raise DataError(f"target class {target} outside 0..{lhat.shape[-1] - 1}")
    return float(-cfg.class_weights[target]
                 * np.log(max(float(lhat[target]), cfg.epsilon)))


def ray_losses(lhats: np.ndarray, targets: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Vectorized weighted CE per ray; targets must be valid class indices."""
    picked = np.take_along_axis(lhats, targets[:, None].astype(np.int64), axis=1)[:, 0]
    return -cfg.class_weights[targets] * np.log(np.maximum(picked, cfg.epsilon))


def frame_loss(lhats: np.ndarray, targets: np.ndarray, kept: np.ndarray,
               cfg: LossConfig) -> float:
    """Mean weighted CE over the supervising rays of one frame.

    A ray supervises when it survived the out-of-bounds filter and its
    label is one of the grid classes. Raises NoSupervisionError when no
    ray qualifies.
    """
    n_classes = cfg.class_weights.shape[0]
    use = np.asarray(kept, dtype=bool) & (targets >= 0) & (targets < n_classes)
    if not use.any():
        raise NoSupervisionError("no kept ray with a usable label in this frame")
    return float(np.mean(ray_losses(lhats[use], targets[use], cfg)))


def ce_coefficients(lhats: np.ndarray, targets: np.ndarray, kept: np.ndarray,
                    cfg: LossConfig, scale: float) -> np.ndarray:
    """d(loss)/d(lhat[target]) per ray, times scale; zero where clamped,
    dropped, or labeled outside the grid classes."""
    n_classes = cfg.class_weights.shape[0]
    use = np.asarray(kept, dtype=bool) & (targets >= 0) & (targets < n_classes)
    t_safe = np.where(use, targets, 0).astype(np.int64)
    picked = np.take_along_axis(lhats, t_safe[:, None], axis=1)[:, 0]
    coeffs = np.where(use & (picked > cfg.epsilon),
                      -cfg.class_weights[t_safe] / np.maximum(picked, cfg.epsilon),
                      0.0)
    return coeffs * scale


def apply_softmax_jacobian(probs_grid: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Route cell-probability gradients through the per-cell softmax."""
    inner = np.sum(dprobs * probs_grid, axis=-1, keepdims=True)
    return probs_grid * (dprobs - inner)


def backward_batch(batch: RayBatch, targets: np.ndarray, coeffs: np.ndarray,
                   dprobs: np.ndarray) -> int:
    """Scatter one frame's probability-space gradients into dprobs.

    Returns the number of rays that contributed. Finalize with
    apply_softmax_jacobian once all frames are accumulated.
    """
    get_kernels().scatter_ce_grad(
        np.ascontiguousarray(batch.rows), np.ascontiguousarray(batch.cols),
        np.ascontiguousarray(batch.inb), np.ascontiguousarray(batch.weights),
        np.ascontiguousarray(coeffs, dtype=np.float64),
        np.ascontiguousarray(targets, dtype=np.int64), dprobs)
    return int(np.count_nonzero((coeffs != 0) & batch.inb.any(axis=1)))


def backward_to_bev(ray: RayIntegration, lhat: np.ndarray, target: int,
                    logits: np.ndarray, cfg: LossConfig, out: GradBuffer,
                    scale: float = 1.0) -> None:
    """Accumulate one kept ray's logit gradient into the buffer.

    Reference (per-ray) form of the batched backward pass: only in-bounds
    samples touch the buffer, each adding
    coeff * w_i * p_t * (onehot(t) - p) at its cell.
    """
    if not ray.kept:
        raise DataError("backward_to_bev requires a kept ray")
    if not 0 <= target < cfg.class_weights.shape[0]:
        raise DataError(f"target class {target} out of range")
    lt = float(np.asarray(lhat)[target])
    coeff = 0.0 if lt <= cfg.epsilon else -cfg.class_weights[target] / lt
    coeff *= scale
    touched = False
    for i, cell in enumerate(ray.cells):
        if not cell.in_bounds:
            continue
        touched = True
        if coeff == 0.0:
            continue
        p = softmax_probs(logits[cell.row, cell.col][None, None, :])[0, 0]
        g = coeff * ray.weights[i] * p[target] * (-p)
        g[target] += coeff * ray.weights[i] * p[target]
        out.grad[cell.row, cell.col] += g
    if touched:
        out.ray_count += 1


def finite_diff_check(instance, n_probes: int, h: float,
                      rng: np.random.Generator) -> dict:
    """Compare the analytic gradient against central finite differences.

    `instance` exposes base logits, loss_at(logits), analytic_grad(), and
    touched_mask() over a frozen supervision draw (geometry, labels, and
    the kept-ray set do not depend on the logits). Probes are drawn from
    the touched logits; relative error uses max(|numeric|, 1e-8) as the
    denominator.
    """
    if n_probes < 1:
        raise ConfigurationError("n_probes must be >= 1")
    analytic = instance.analytic_grad()
    touched = np.argwhere(instance.touched_mask())
    if touched.shape[0] == 0:
        raise NoSupervisionError("no touched logits to probe")
    picks = rng.choice(touched.shape[0], size=n_probes,
                       replace=touched.shape[0] < n_probes)
    rel_errs = np.empty(n_probes)
    for idx, pick in enumerate(picks):
        r, c, k = touched[pick]
        logits = instance.logits.copy()
        logits[r, c, k] += h
        up = instance.loss_at(logits)
        logits[r, c, k] -= 2 * h
        down = instance.loss_at(logits)
        numeric = (up - down) / (2 * h)
        rel_errs[idx] = abs(analytic[r, c, k] - numeric) / max(abs(numeric), 1e-8)
    worst_pick = touched[picks[int(np.argmax(rel_errs))]]
    return {
        "probes": int(n_probes),
        "h": float(h),
        "max_rel_err": float(rel_errs.max()),
        "mean_rel_err": float(rel_errs.mean()),
        "worst_cell": [int(v) for v in worst_pick],
    }
