"""Frozen volumetric density fields: the geometry oracle of the method.

A field maps 3D points to a non-negative density sigma (1/m). All fields
here are total and deterministic; out-of-domain regions return 0. Queries
carry no gradient anywhere in the pipeline: geometry is frozen.

Three families cover the experiments:
  * analytic scene occupancy (ground half-space + boxes),
  * a single-view "occupancy shadow" field derived from a depth image
    (solid at and behind every observed surface, empty in front),
  * frustum-restricted wrappers of either.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .geometry import Intrinsics, Pose, project_points
from .imageio import read_pgm, write_pgm
from .kernels import get_kernels

DEFAULT_SIGMA_SOLID = 50.0


@dataclass(frozen=True)
class Frustum:
    """View volume of one pinhole camera between two depth planes."""

    pose: Pose
    intr: Intrinsics
    z_near: float
    z_far: float

    def __post_init__(self):
        if not (0 < self.z_near < self.z_far):
            raise ConfigurationError("require 0 < z_near < z_far")

    def contains(self, points_world: np.ndarray) -> np.ndarray:
        """Boolean mask for world points (N, 3) inside the frustum."""
        local = self.pose.inverse().apply(np.atleast_2d(points_world))
        z = local[:, 2]
        u, v = project_points(self.intr, local)
        with np.errstate(invalid="ignore"):
            ok = (z >= self.z_near) & (z <= self.z_far)
            ok &= (u >= 0) & (u < self.intr.width) & (v >= 0) & (v < self.intr.height)
        return ok


class DensityField:
    """Query contract: world points (N, 3) -> densities (N,), all >= 0."""

    def query(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class EmptyField(DensityField):
    def query(self, points: np.ndarray) -> np.ndarray:
        return np.zeros(np.atleast_2d(points).shape[0])


class SceneField(DensityField):
    """Occupancy of an analytic scene: sigma_solid inside any closed solid."""

    def __init__(self, ground_y: float, boxes: np.ndarray, sigma_solid: float):
        if sigma_solid <= 0:
            raise ConfigurationError("sigma_solid must be positive")
        self.ground_y = float(ground_y)
        self.boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 8)
        self.sigma_solid = float(sigma_solid)

    def query(self, points: np.ndarray) -> np.ndarray:
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        return get_kernels().scene_sigma(pts, self.ground_y, self.boxes, self.sigma_solid)


class DepthShadowField(DensityField):
    """Single-view field: empty strictly in front of each observed surface,
    solid at and behind it up to z_far, zero outside the view frustum.

    Emulates geometry inferred from one viewpoint, including the occupancy
    shadows such a field casts behind solid objects.
    """

    def __init__(self, depth: np.ndarray, view: Frustum, sigma_solid: float):
        depth = np.asarray(depth, dtype=np.float64)
        if depth.shape != (view.intr.height, view.intr.width):
            raise ConfigurationError(
                f"depth image {depth.shape} does not match view "
                f"{view.intr.height}x{view.intr.width}")
        if sigma_solid <= 0:
            raise ConfigurationError("sigma_solid must be positive")
        self.depth = depth
        self.view = view
        self.sigma_solid = float(sigma_solid)

    def query(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        local = self.view.pose.inverse().apply(pts)
        z = local[:, 2]
        u, v = project_points(self.view.intr, local)
        with np.errstate(invalid="ignore"):
            inside = (z >= self.view.z_near) & (z <= self.view.z_far)
            inside &= (u >= 0) & (u < self.view.intr.width)
            inside &= (v >= 0) & (v < self.view.intr.height)
        out = np.zeros(pts.shape[0])
        if inside.any():
            ui = np.floor(u[inside]).astype(np.int64)
            vi = np.floor(v[inside]).astype(np.int64)
            behind = z[inside] >= self.depth[vi, ui]
            vals = np.where(behind, self.sigma_solid, 0.0)
            out[inside] = vals
        return out


class FrustumRestrictedField(DensityField):
    """Zero outside the given frustum, the wrapped field inside."""

    def __init__(self, inner: DensityField, view: Frustum):
        self.inner = inner
        self.view = view

    def query(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        mask = self.view.contains(pts)
        out = np.zeros(pts.shape[0])
        if mask.any():
            out[mask] = self.inner.query(pts[mask])
        return out


class FrameLocalField(DensityField):
    """Adapter exposing a world-frame field in one camera's coordinates."""

    def __init__(self, world_field: DensityField, cam_to_world: Pose):
        self.world_field = world_field
        self.cam_to_world = cam_to_world

    def query(self, points: np.ndarray) -> np.ndarray:
        return self.world_field.query(self.cam_to_world.apply(np.atleast_2d(points)))


class CastSceneView(DensityField):
    """Scene occupancy clipped to the casting camera's frustum, expressed
    in that camera's coordinates.

    Equivalent to in_frame(restrict_to_frustum(scene_field(...), frustum),
    cast_pose) for the camera's own frustum, but carries the raw arrays so
    the renderer can run its fused per-ray kernel.
    """

    fused_kind = "scene"

    def __init__(self, cast_pose: Pose, intr: Intrinsics, z_near: float,
                 z_far: float, ground_y: float, boxes: np.ndarray,
                 sigma_solid: float):
        self.cast_pose = cast_pose
        self.intr = intr
        self.z_near = float(z_near)
        self.z_far = float(z_far)
        self.ground_y = float(ground_y)
        self.boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 8)
        self.sigma_solid = float(sigma_solid)

    def query(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        z = pts[:, 2]
        u, v = project_points(self.intr, pts)
        with np.errstate(invalid="ignore"):
            inside = (z >= self.z_near) & (z <= self.z_far)
            inside &= (u >= 0) & (u < self.intr.width)
            inside &= (v >= 0) & (v < self.intr.height)
        out = np.zeros(pts.shape[0])
        if inside.any():
            world = self.cast_pose.apply(pts[inside])
            out[inside] = get_kernels().scene_sigma(
                np.ascontiguousarray(world), self.ground_y, self.boxes,
                self.sigma_solid)
        return out


class CastShadowView(DensityField):
    """A reference-view shadow field expressed in a casting camera's
    coordinates, with the raw arrays for the fused render kernel."""

    fused_kind = "shadow"

    def __init__(self, shadow: DepthShadowField, cast_pose: Pose):
        self.shadow = shadow
        self.cast_pose = cast_pose

    def query(self, points: np.ndarray) -> np.ndarray:
        return self.shadow.query(self.cast_pose.apply(np.atleast_2d(points)))


def query_density(field: DensityField, x_world: np.ndarray) -> float:
    """Single-point convenience wrapper over the batch query."""
    return float(field.query(np.asarray(x_world, dtype=np.float64).reshape(1, 3))[0])


def scene_field(scene, sigma_solid: float = DEFAULT_SIGMA_SOLID) -> SceneField:
    """Occupancy field of a scenesim.Scene."""
    boxes, _ = scene.to_arrays()
    return SceneField(scene.ground_y, boxes, sigma_solid)


def depth_shadow_field(depth: np.ndarray, view: Frustum,
                       sigma_solid: float = DEFAULT_SIGMA_SOLID) -> DepthShadowField:
    return DepthShadowField(depth, view, sigma_solid)


def restrict_to_frustum(field: DensityField, view: Frustum) -> FrustumRestrictedField:
    return FrustumRestrictedField(field, view)


def in_frame(world_field: DensityField, cam_to_world: Pose) -> FrameLocalField:
    return FrameLocalField(world_field, cam_to_world)


def save_depth_pgm(path, depth_m: np.ndarray) -> None:
    """16-bit PGM, depth_mm = round(depth * 1000), capped at 65535."""
    mm = np.minimum(np.round(np.asarray(depth_m) * 1000.0), 65535.0)
    write_pgm(path, mm.astype(np.uint16), maxval=65535)


def load_depth_pgm(path) -> np.ndarray:
    mm = read_pgm(path)
    return mm.astype(np.float64) / 1000.0
