"""Self-supervised optimization of the top-down grid.

Each iteration samples patches across a set of supervision frames
(adjacent plus randomly drawn future offsets), renders them against the
current grid, averages the class-weighted CE per frame and then across
frames, backpropagates into the logits, and applies one SGD step with
Nesterov momentum. The density field used for a frame comes from a field
provider: either the scene field seen from the rendered frame itself, or
a single shadow field derived from the reference view.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .bevgrid import BevGrid, BevSpec, softmax_probs
from .density import (CastSceneView, CastShadowView, DensityField, Frustum,
                      depth_shadow_field)
from .errors import ConfigurationError, NoSupervisionError, NumericError
from .geometry import compose_relative_pose, pixel_ray_directions
from .kernels import get_kernels
from .lossgrad import (GradBuffer, LossConfig, apply_softmax_jacobian,
                       backward_batch, ce_coefficients, ray_losses)
from .renderer import RayBatch, RenderConfig, patch_pixels, render_rays
from .scenesim import Scene, Sequence, gt_bev, render_depth_image

PAPER_FUTURE_RANGES = ((5, 11), (12, 18), (19, 25), (26, 32), (33, 39))


@dataclass(frozen=True)
class FrameOffsetPolicy:
    """Which frame offsets supervise the reference frame.

    Adjacent offsets are always candidates; one offset is drawn uniformly
    from each future range when enabled_future is set. Ranges are
    inclusive, must not overlap, and must start at +2 or later.
    """

    adjacent: tuple[int, ...] = (-1, 1)
    future_ranges: tuple[tuple[int, int], ...] = PAPER_FUTURE_RANGES
    enabled_future: bool = True

    def __post_init__(self):
        spans = sorted(self.future_ranges)
        for a, b in spans:
            if b < a:
                raise ConfigurationError(f"empty offset range ({a}, {b})")
            if a < 2:
                raise ConfigurationError("future ranges must start at +2 or later")
        for (_, b1), (a2, _) in zip(spans, spans[1:]):
            if a2 <= b1:
                raise ConfigurationError("future ranges must not overlap")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 1e-5
    nesterov: bool = True
    iterations: int = 500
    patches_total: int = 192
    patch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be non-negative")
        if self.patches_total < 1:
            raise ConfigurationError("patches_total must be >= 1")
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")


def sample_supervision(seq: Sequence, r: int, policy: FrameOffsetPolicy,
                       patches_total: int, rng: np.random.Generator,
                       patch_size: int = 16) -> list[tuple[int, tuple[int, int]]]:
    """Draw (frame index, patch origin) pairs for one iteration.

    One offset per reachable future range plus the reachable adjacent
    offsets; patch counts are balanced across the selected frames (they
    differ by at most one) and origins are uniform over positions that
    keep the patch fully inside the image.
    """
    n = len(seq)
    frames = [r + o for o in policy.adjacent if 0 <= r + o < n]
    if policy.enabled_future:
        for a, b in policy.future_ranges:
            lo, hi = r + a, min(r + b, n - 1)
            if lo <= hi:
                frames.append(int(rng.integers(lo, hi + 1)))
    if not frames:
        raise ConfigurationError("no reachable supervision frame for this policy")

    counts = np.full(len(frames), patches_total // len(frames))
    extra = patches_total % len(frames)
    if extra:
        counts[rng.choice(len(frames), size=extra, replace=False)] += 1

    p = patch_size
    draws = []
    for k, count in zip(frames, counts):
        u0s = rng.integers(0, seq.intr.width - p + 1, size=count)
        v0s = rng.integers(0, seq.intr.height - p + 1, size=count)
        draws.extend((k, (int(u), int(v))) for u, v in zip(u0s, v0s))
    return draws



class PerFrameFields:
    """Scene occupancy restricted to the frustum of the rendered frame."""

    def __init__(self, scene: Scene, seq: Sequence, cfg: RenderConfig,
                 sigma_solid: float = 50.0):
        self._boxes, _ = scene.to_arrays()
        self._ground_y = scene.ground_y
        self._sigma = sigma_solid
        self._seq = seq
        self._cfg = cfg

    def field_for_frame(self, k: int) -> DensityField:
        return CastSceneView(self._seq.poses[k], self._seq.intr,
                             self._cfg.z_near, self._cfg.z_far,
                             self._ground_y, self._boxes, self._sigma)


class ReferenceShadowFields:
    """One shadow field from the reference view, used for every frame."""

    def __init__(self, scene: Scene, seq: Sequence, r: int, cfg: RenderConfig,
                 sigma_solid: float = 50.0):
        pose = seq.poses[r]
        depth = render_depth_image(scene, pose, seq.intr, cfg.z_far, cfg.z_near)
        frustum = Frustum(pose, seq.intr, cfg.z_near, cfg.z_far)
        self._shadow = depth_shadow_field(depth, frustum, sigma_solid)
        self._seq = seq

    def field_for_frame(self, k: int) -> DensityField:
        return CastShadowView(self._shadow, self._seq.poses[k])


def sgd_step(grid: BevGrid, grad, velocity: np.ndarray, cfg: TrainConfig) -> None:
    """One (Nesterov) SGD update of the grid logits, in place.

    g = grad + weight_decay * logits; v = momentum * v + g;
    step = g + momentum * v when nesterov, else v.
    """
    g = grad.grad if isinstance(grad, GradBuffer) else np.asarray(grad)
    if g.shape != grid.logits.shape:
        raise ConfigurationError("gradient shape does not match the grid")
    if not np.isfinite(g).all():
        raise NumericError("non-finite gradient")
    g = g + cfg.weight_decay * grid.logits
    velocity *= cfg.momentum
    velocity += g
    step = g + cfg.momentum * velocity if cfg.nesterov else velocity
    grid.logits -= cfg.lr * step


@dataclass
class TrainResult:
    grid: BevGrid
    losses: list          # one entry per iteration; None where skipped
    kept_fractions: list  # kept rays / rays cast, per iteration
    coverage: np.ndarray  # cells that received supervision (bool, rows x cols)
    sec_per_iter: float


def _render_frame_patches(probs, spec: BevSpec, seq: Sequence, r: int, k: int,
                          origins, field: DensityField, cfg: RenderConfig,
                          rng) -> tuple[RayBatch, np.ndarray]:
    """Render all of one frame's patches in a single batch, with labels."""
    pix = [patch_pixels(o, cfg.patch_size) for o in origins]
    us = np.concatenate([p[0] for p in pix])
    vs = np.concatenate([p[1] for p in pix])
    dirs = pixel_ray_directions(seq.intr, us, vs)
    k_to_r = compose_relative_pose(seq.poses[k], seq.poses[r])
    batch = render_rays(probs, spec, k_to_r, dirs, us, vs, field, cfg, rng)
    targets = seq.seg_images[k][vs.astype(np.int64), us.astype(np.int64)]
    return batch, targets.astype(np.int64)


def train_bev(seq: Sequence, r: int, fields, policy: FrameOffsetPolicy,
              spec: BevSpec, render_cfg: RenderConfig, train_cfg: TrainConfig,
              loss_cfg: LossConfig, rng: np.random.Generator) -> TrainResult:
    """Optimize a zero-initialized grid against the sequence.

    Iterations with no usable ray are recorded as None in the loss
    history; if the whole run produces none, NoSupervisionError is raised.
    """
    n_classes = loss_cfg.class_weights.shape[0]
    grid = BevGrid.zeros(spec, n_classes)
    velocity = np.zeros_like(grid.logits)
    coverage = np.zeros((spec.rows, spec.cols), dtype=bool)
    losses: list = []
    kept_fractions: list = []
    frame_fields: dict[int, DensityField] = {}

    t0 = time.perf_counter()
    for _ in range(train_cfg.iterations):
        probs = softmax_probs(grid.logits)
        draws = sample_supervision(seq, r, policy, train_cfg.patches_total, rng,
                                   train_cfg.patch_size)
        by_frame: dict[int, list] = {}
        for k, origin in draws:
            by_frame.setdefault(k, []).append(origin)

        rendered = []
        total_rays = 0
        total_kept = 0
        for k in sorted(by_frame):
            if k not in frame_fields:
                frame_fields[k] = fields.field_for_frame(k)
            batch, targets = _render_frame_patches(
                probs, spec, seq, r, k, by_frame[k], frame_fields[k],
                render_cfg, rng)
            usable = batch.kept & (targets >= 0) & (targets < n_classes)
            total_rays += batch.n_rays
            total_kept += int(np.count_nonzero(batch.kept))
            if usable.any():
                rendered.append((batch, targets, usable))
        kept_fractions.append(total_kept / total_rays if total_rays else 0.0)

        if not rendered:
            losses.append(None)
            continue

        n_frames = len(rendered)
        dprobs = np.zeros_like(grid.logits)
        frame_losses = []
        for batch, targets, usable in rendered:
            per_ray = ray_losses(batch.lhat[usable], targets[usable], loss_cfg)
            frame_losses.append(float(per_ray.mean()))
            scale = 1.0 / (n_frames * int(np.count_nonzero(usable)))
            coeffs = ce_coefficients(batch.lhat, targets, usable, loss_cfg, scale)
            backward_batch(batch, targets, coeffs, dprobs)
            hit = batch.inb & (batch.weights > 0) & (coeffs != 0.0)[:, None]
            coverage[batch.rows[hit], batch.cols[hit]] = True
        losses.append(float(np.mean(frame_losses)))

        dlogits = apply_softmax_jacobian(probs, dprobs)
        sgd_step(grid, dlogits, velocity, train_cfg)
    elapsed = time.perf_counter() - t0

    if train_cfg.iterations and all(v is None for v in losses):
        raise NoSupervisionError("every iteration was filtered; nothing was learned")
    return TrainResult(grid=grid, losses=losses, kept_fractions=kept_fractions,
                       coverage=coverage,
                       sec_per_iter=elapsed / max(train_cfg.iterations, 1))


class SupervisionInstance:
    """One frozen supervision draw with a differentiable loss over logits.

    Geometry, labels, and the kept-ray sets are fixed at construction;
    only the softmax/sampling/compositing/loss stages are recomputed when
    the logits change. Used by the finite-difference gradient check.
    """

    def __init__(self, frames: list[tuple[RayBatch, np.ndarray, np.ndarray]],
                 logits: np.ndarray, loss_cfg: LossConfig):
        if not frames:
            raise NoSupervisionError("no frame with usable rays")
        self.frames = frames
        self.logits = logits
        self.loss_cfg = loss_cfg

    def _lhat(self, probs: np.ndarray, batch: RayBatch) -> np.ndarray:
        lhat, _ = get_kernels().composite_probs(
            np.ascontiguousarray(probs), np.ascontiguousarray(batch.rows),
            np.ascontiguousarray(batch.cols), np.ascontiguousarray(batch.inb),
            np.ascontiguousarray(batch.weights))
        return lhat

    def loss_at(self, logits: np.ndarray) -> float:
        probs = softmax_probs(logits)
        frame_losses = []
        for batch, targets, usable in self.frames:
            lhat = self._lhat(probs, batch)
            frame_losses.append(float(np.mean(
                ray_losses(lhat[usable], targets[usable], self.loss_cfg))))
        return float(np.mean(frame_losses))

    def analytic_grad(self) -> np.ndarray:
        probs = softmax_probs(self.logits)
        dprobs = np.zeros_like(self.logits)
        n_frames = len(self.frames)
        for batch, targets, usable in self.frames:
            lhat = self._lhat(probs, batch)
            scale = 1.0 / (n_frames * int(np.count_nonzero(usable)))
            coeffs = ce_coefficients(lhat, targets, usable, self.loss_cfg, scale)
            backward_batch(batch, targets, coeffs, dprobs)
        return apply_softmax_jacobian(probs, dprobs)

    def touched_mask(self) -> np.ndarray:
        cells = np.zeros(self.logits.shape[:2], dtype=bool)
        for batch, _, usable in self.frames:
            hit = batch.inb & (batch.weights > 0) & usable[:, None]
            cells[batch.rows[hit], batch.cols[hit]] = True
        return np.broadcast_to(cells[:, :, None], self.logits.shape)


def make_supervision_instance(seq: Sequence, r: int, fields,
                              policy: FrameOffsetPolicy, spec: BevSpec,
                              render_cfg: RenderConfig, n_patches: int,
                              patch_size: int, loss_cfg: LossConfig,
                              rng: np.random.Generator,
                              logits: np.ndarray | None = None
                              ) -> SupervisionInstance:
    """Render one iteration's worth of patches and freeze it for checking."""
    n_classes = loss_cfg.class_weights.shape[0]
    if logits is None:
        logits = np.zeros((spec.rows, spec.cols, n_classes))
    probs = softmax_probs(logits)
    cfg = RenderConfig(m=render_cfg.m, z_near=render_cfg.z_near,
                       z_far=render_cfg.z_far, jitter=render_cfg.jitter,
                       tau=render_cfg.tau, patch_size=patch_size)
    draws = sample_supervision(seq, r, policy, n_patches, rng, patch_size)
    by_frame: dict[int, list] = {}
    for k, origin in draws:
        by_frame.setdefault(k, []).append(origin)
    frames = []
    for k in sorted(by_frame):
        batch, targets = _render_frame_patches(
            probs, spec, seq, r, k, by_frame[k], fields.field_for_frame(k),
            cfg, rng)
        usable = batch.kept & (targets >= 0) & (targets < n_classes)
        if usable.any():
            frames.append((batch, targets, usable))
    return SupervisionInstance(frames, logits, loss_cfg)


def inverse_frequency_weights(gt_labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Inverse class frequency over a label grid, normalized to mean 1.

    Classes absent from the grid get the mean weight of the present ones,
    so they neither dominate nor vanish.
    """
    counts = np.bincount(np.asarray(gt_labels).reshape(-1), minlength=n_classes)
    counts = counts[:n_classes].astype(np.float64)
    present = counts > 0
    if not present.any():
        return np.ones(n_classes)
    inv = np.zeros(n_classes)
    inv[present] = counts[present].sum() / counts[present]
    inv[~present] = inv[present].mean()
    return inv / inv.mean()
