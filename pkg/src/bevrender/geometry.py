"""Pinhole cameras, rigid poses, rays, and the top-down ground projection.

Conventions: camera frames are x-right, y-down, z-forward. A Pose maps
points from its own frame into the world frame. The ground projection
drops the vertical (y) coordinate, leaving metric (x, z).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigurationError("principal point must lie inside the image")


@dataclass(frozen=True)
class Pose:
    """Rigid transform: p_world = rotation @ p_frame + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL:
            raise ConfigurationError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ConfigurationError("rotation determinant must be +1")
        r.setflags(write=False)
        t.setflags(write=False)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a batch (N, 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """self after other: result.apply(p) == self.apply(other.apply(p))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)


@dataclass(frozen=True)
class Ray:
    """Origin plus unit direction, both in one stated frame."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ConfigurationError("ray direction must be unit length")


def compose_relative_pose(k_to_world: Pose, r_to_world: Pose) -> Pose:
    """Relative pose taking frame-k camera points into frame-r coordinates."""
    return r_to_world.inverse().compose(k_to_world)


def transform_point(pose: Pose, x: np.ndarray) -> np.ndarray:
    return pose.apply(x)


def pixel_ray(intr: Intrinsics, pixel: tuple[float, float]) -> Ray:
    """Back-project a continuous pixel coordinate into a camera-frame ray.

    The origin is the camera center; the direction is the normalized
    pinhole direction ((u-cx)/fx, (v-cy)/fy, 1).
    """
    u, v = pixel
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise DataError(f"pixel ({u}, {v}) outside {intr.width}x{intr.height} image")
    d = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    return Ray(np.zeros(3), d / np.linalg.norm(d))


def pixel_ray_directions(intr: Intrinsics, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Unit ray directions (N, 3) for batches of continuous pixel coords."""
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    d = np.stack([(us - intr.cx) / intr.fx,
                  (vs - intr.cy) / intr.fy,
                  np.ones_like(us)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def project_points(intr: Intrinsics, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection of camera-frame points (N, 3) -> (u, v) each (N,).

    Points at or behind the camera plane (z <= 0) yield non-finite coords.
    """
    pts = np.asarray(pts, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(pts[..., 2] > 0, pts[..., 2], np.nan)
        u = intr.fx * pts[..., 0] / z + intr.cx
        v = intr.fy * pts[..., 1] / z + intr.cy
    return u, v


def ortho_project(p: np.ndarray) -> np.ndarray:
    """Drop the vertical coordinate: (x, y, z) -> (x, z). Broadcasts over (..., 3)."""
    p = np.asarray(p, dtype=np.float64)
    return p[..., (0, 2)]


def save_poses(path, poses: list[Pose]) -> None:
    """Write one frame per line: 12 numbers, row-major 3x4 [R|t], meters."""
    with open(path, "w", encoding="ascii") as fh:
        for pose in poses:
            mat = np.hstack([pose.rotation, pose.translation[:, None]])
            fh.write(" ".join(f"{v:.17g}" for v in mat.reshape(-1)) + "\n")


def load_poses(path) -> list[Pose]:
    poses = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            vals = line.split()
            if len(vals) != 12:
                raise DataError(f"{path}:{lineno}: expected 12 numbers, got {len(vals)}")
            mat = np.array([float(v) for v in vals], dtype=np.float64).reshape(3, 4)
            try:
                poses.append(Pose(mat[:, :3], mat[:, 3]))
            except ConfigurationError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return poses
