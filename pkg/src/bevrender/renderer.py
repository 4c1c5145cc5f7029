"""Forward rendering: stratified depth sampling, density integration, and
alpha compositing of class probabilities sampled from the top-down grid.

Rays are cast from a target camera frame k; every 3D sample is mapped into
the reference frame r, dropped onto the ground plane, and looked up in the
grid by nearest cell. Samples landing outside the grid rectangle (or behind
the reference camera) contribute their opacity mass to a rendered
out-of-bounds indicator instead of the class vector; rays whose indicator
exceeds a threshold are flagged as dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bevgrid import BevGrid, BevSpec, CellRef, cells_from_xz, softmax_probs
from .density import DensityField
from .errors import ConfigurationError
from .geometry import Intrinsics, Pose, ortho_project, pixel_ray_directions
from .kernels import get_kernels


@dataclass(frozen=True)
class RenderConfig:
    """Sampling and filtering parameters for ray rendering.

    m samples per ray between z_near and z_far (meters along the ray),
    stratified uniformly in disparity, jittered within each bin when
    jitter is on. tau is the out-of-bounds filter threshold; patch_size
    the square patch edge in pixels.
    """

    m: int = 64
    z_near: float = 3.0
    z_far: float = 40.0
    jitter: bool = True
    tau: float = 0.2
    patch_size: int = 16

    def __post_init__(self):
        if self.m < 2:
            raise ConfigurationError("need at least 2 samples per ray")
        if not (0 < self.z_near < self.z_far):
            raise ConfigurationError("require 0 < z_near < z_far")
        if not (0 <= self.tau <= 1):
            raise ConfigurationError("tau must lie in [0, 1]")
        if self.patch_size < 1:
            raise ConfigurationError("patch_size must be >= 1")


@dataclass
class RayIntegration:
    """Full per-ray record of one rendered ray."""

    depths: np.ndarray          # (m,) ascending, meters along the ray
    deltas: np.ndarray          # (m,) inter-sample spacing, last = z_far - depths[-1]
    sigmas: np.ndarray          # (m,) queried densities
    alphas: np.ndarray          # (m,)
    transmittances: np.ndarray  # (m,)
    weights: np.ndarray         # (m,) T_i * alpha_i
    cells: list[CellRef]        # sampled grid cells
    probs: np.ndarray           # (m, C) sampled class vectors (uniform when OOB)
    oob: float                  # rendered out-of-bounds indicator
    kept: bool                  # oob <= tau


def sample_ray_depths(cfg: RenderConfig, rng: np.random.Generator) -> np.ndarray:
    """Stratified depths for one ray, ascending, within [z_near, z_far].

    Disparity bins run from 1/z_far to 1/z_near; each bin contributes one
    sample at its jittered (or central) offset, and depths are the
    reciprocals.
    """
    return sample_depths_batch(cfg, 1, rng)[0]


def sample_depths_batch(cfg: RenderConfig, n_rays: int,
                        rng: np.random.Generator | None) -> np.ndarray:
    """(n_rays, m) stratified depths; one uniform draw per bin when jittered."""
    d_near = 1.0 / cfg.z_near
    d_far = 1.0 / cfg.z_far
    if cfg.jitter:
        if rng is None:
            raise ConfigurationError("jitter requires a random generator")
        u = rng.random((n_rays, cfg.m))
    else:
        u = np.full((n_rays, cfg.m), 0.5)
    j = np.arange(cfg.m, dtype=np.float64)
    disparities = d_far + (j + u) / cfg.m * (d_near - d_far)
    return (1.0 / disparities)[:, ::-1].copy()


def deltas_from_depths(depths: np.ndarray, z_far: float) -> np.ndarray:
    """Inter-sample spacing along the ray; the last interval runs to z_far."""
    deltas = np.empty_like(depths)
    deltas[..., :-1] = np.diff(depths, axis=-1)
    deltas[..., -1] = z_far - depths[..., -1]
    return deltas


def integrate_ray(sigmas: np.ndarray, deltas: np.ndarray):
    """Alpha, transmittance, and compositing weights for one ray.

    alpha_i = 1 - exp(-sigma_i * delta_i); T_i is the product of
    (1 - alpha_j) over earlier samples; w_i = T_i * alpha_i.
    """
    a, t, w = get_kernels().integrate_rays(
        np.ascontiguousarray(sigmas, dtype=np.float64).reshape(1, -1),
        np.ascontiguousarray(deltas, dtype=np.float64).reshape(1, -1))
    return a[0], t[0], w[0]


def render_class_probs(weights: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Composite per-sample class vectors: sum_i w_i * probs_i, no renormalization."""
    return np.asarray(weights, dtype=np.float64) @ np.asarray(probs, dtype=np.float64)


def render_scalar(weights: np.ndarray, values: np.ndarray) -> float:
    """Composite a per-sample scalar (out-of-bounds indicator, expected depth)."""
    return float(np.dot(np.asarray(weights, dtype=np.float64),
                        np.asarray(values, dtype=np.float64)))


@dataclass
class RayBatch:
    """Vectorized result of rendering a batch of rays from one frame."""

    us: np.ndarray       # (R,) continuous pixel coords the rays were cast from
    vs: np.ndarray
    depths: np.ndarray   # (R, m)
    deltas: np.ndarray
    sigmas: np.ndarray
    alphas: np.ndarray
    trans: np.ndarray
    weights: np.ndarray
    rows: np.ndarray     # (R, m) sampled cell indices (valid where inb)
    cols: np.ndarray
    inb: np.ndarray      # (R, m) sample lands inside the grid rectangle
    lhat: np.ndarray     # (R, C) rendered class vectors (in-bounds mass only)
    oob: np.ndarray      # (R,) rendered out-of-bounds indicator
    kept: np.ndarray     # (R,) oob <= tau

    @property
    def n_rays(self) -> int:
        return self.us.shape[0]


def render_rays(probs_grid: np.ndarray, spec: BevSpec, k_to_r: Pose,
                dirs: np.ndarray, us: np.ndarray, vs: np.ndarray,
                field: DensityField, cfg: RenderConfig,
                rng: np.random.Generator | None) -> RayBatch:
    """Render rays with unit directions (R, 3) given in the casting frame.

    `field` must answer queries in the same casting frame (wrap a world
    field with density.in_frame). probs_grid is the softmaxed reference
    grid (rows, cols, C).
    """
    kern = get_kernels()
    n_rays = dirs.shape[0]
    dirs = np.ascontiguousarray(dirs)
    depths = sample_depths_batch(cfg, n_rays, rng)
    deltas = np.ascontiguousarray(deltas_from_depths(depths, cfg.z_far))
    probs_grid = np.ascontiguousarray(probs_grid)
    bev_args = (spec.origin_x, spec.origin_z, spec.cell_lateral,
                spec.cell_depth, spec.rows, spec.cols)

    # Fused fast paths for the two field families rays are trained
    # against; anything else goes through the generic query contract.
    kind = getattr(field, "fused_kind", None)
    if kind == "scene":
        out = kern.render_scene_rays(
            dirs, depths, deltas, field.cast_pose.rotation,
            field.cast_pose.translation, field.ground_y, field.boxes,
            field.sigma_solid, field.z_near, field.z_far,
            k_to_r.rotation, k_to_r.translation, *bev_args, probs_grid)
        sigmas, alphas, trans, weights, rows, cols, inb, lhat, oob = out
    elif kind == "shadow":
        shadow = field.shadow
        ref = shadow.view
        out = kern.render_shadow_rays(
            dirs, depths, deltas, field.cast_pose.rotation,
            field.cast_pose.translation,
            np.ascontiguousarray(ref.pose.rotation.T), ref.pose.translation,
            np.ascontiguousarray(shadow.depth), ref.intr.fx, ref.intr.fy,
            ref.intr.cx, ref.intr.cy, float(ref.intr.width),
            float(ref.intr.height), shadow.sigma_solid, ref.z_near, ref.z_far,
            k_to_r.rotation, k_to_r.translation, *bev_args, probs_grid)
        sigmas, alphas, trans, weights, rows, cols, inb, lhat, oob = out
    else:
        pts_cast = dirs[:, None, :] * depths[:, :, None]          # (R, m, 3)
        sigmas = field.query(pts_cast.reshape(-1, 3)).reshape(n_rays, cfg.m)
        pts_ref = k_to_r.apply(pts_cast.reshape(-1, 3)).reshape(n_rays, cfg.m, 3)
        rows, cols, inb = cells_from_xz(spec, ortho_project(pts_ref))
        inb &= pts_ref[:, :, 2] >= 0.0  # behind the reference camera is OOB
        sigmas = np.ascontiguousarray(sigmas)
        alphas, trans, weights = kern.integrate_rays(sigmas, deltas)
        lhat, oob = kern.composite_probs(
            probs_grid, np.ascontiguousarray(rows), np.ascontiguousarray(cols),
            np.ascontiguousarray(inb), np.ascontiguousarray(weights))
    kept = oob <= cfg.tau
    return RayBatch(us=us, vs=vs, depths=depths, deltas=deltas, sigmas=sigmas,
                    alphas=alphas, trans=trans, weights=weights, rows=rows,
                    cols=cols, inb=inb, lhat=lhat, oob=oob, kept=kept)


class PatchRender:
    """Per-pixel records for one rendered patch, row-major pixel order."""

    def __init__(self, batch: RayBatch, probs_grid: np.ndarray):
        self.batch = batch
        self._probs_grid = probs_grid

    @property
    def lhat(self) -> np.ndarray:
        return self.batch.lhat

    @property
    def kept(self) -> np.ndarray:
        return self.batch.kept

    def ray(self, i: int) -> RayIntegration:
        b = self.batch
        n_classes = self._probs_grid.shape[2]
        cells = [CellRef(int(b.rows[i, j]), int(b.cols[i, j]), bool(b.inb[i, j]))
                 for j in range(b.depths.shape[1])]
        probs = np.where(b.inb[i, :, None],
                         self._probs_grid[b.rows[i], b.cols[i]],
                         1.0 / n_classes)
        return RayIntegration(depths=b.depths[i], deltas=b.deltas[i],
                              sigmas=b.sigmas[i], alphas=b.alphas[i],
                              transmittances=b.trans[i], weights=b.weights[i],
                              cells=cells, probs=probs, oob=float(b.oob[i]),
                              kept=bool(b.kept[i]))

    def trace(self) -> list[dict]:
        """JSON-ready per-ray dump: depths, sigmas, weights, cell indices."""
        b = self.batch
        return [
            {
                "pixel": [float(b.us[i]), float(b.vs[i])],
                "depths": b.depths[i].tolist(),
                "sigmas": b.sigmas[i].tolist(),
                "weights": b.weights[i].tolist(),
                "cells": [[int(r), int(c)] for r, c in zip(b.rows[i], b.cols[i])],
                "in_bounds": b.inb[i].astype(int).tolist(),
                "oob": float(b.oob[i]),
                "kept": bool(b.kept[i]),
            }
            for i in range(b.n_rays)
        ]


def patch_pixels(origin: tuple[int, int], patch_size: int):
    """Pixel-center coordinates of a square patch, row-major."""
    u0, v0 = origin
    vs, us = np.meshgrid(np.arange(patch_size), np.arange(patch_size), indexing="ij")
    return (us.reshape(-1) + u0 + 0.5, vs.reshape(-1) + v0 + 0.5)


def render_patch(ref_grid: BevGrid, k_to_r: Pose, intr: Intrinsics,
                 field: DensityField, patch_origin: tuple[int, int],
                 cfg: RenderConfig, rng: np.random.Generator | None) -> PatchRender:
    """Render one square patch of rays cast from frame k.

    patch_origin is the integer top-left pixel; the patch must lie fully
    inside the image. Returns per-pixel rendered class vectors plus the
    full integration record for each ray.
    """
    u0, v0 = patch_origin
    if not (0 <= u0 and u0 + cfg.patch_size <= intr.width
            and 0 <= v0 and v0 + cfg.patch_size <= intr.height):
        raise ConfigurationError(
            f"patch at ({u0}, {v0}) size {cfg.patch_size} exceeds the image")
    us, vs = patch_pixels(patch_origin, cfg.patch_size)
    dirs = pixel_ray_directions(intr, us, vs)
    probs_grid = softmax_probs(ref_grid)
    batch = render_rays(probs_grid, ref_grid.spec, k_to_r, dirs, us, vs,
                        field, cfg, rng)
    return PatchRender(batch, probs_grid)
