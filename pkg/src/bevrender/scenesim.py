"""Synthetic driving scenes with mutually consistent geometry and labels.

A scene is an infinite ground plane (class road) plus yaw-rotated boxes:
thin slabs for sidewalk/terrain, tall prisms for buildings, car-sized
prisms for parked cars. Everything downstream derives from this one
description: the occupancy density field, exact first-hit perspective
segmentations and depth maps, and the ground-truth top-down label grid,
so the three representations agree by construction.

Class convention: index 0 is the ground class, the last palette entry is
void (sky / beyond the horizon cutoff); the grid classes are everything
except void.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bevgrid import BevSpec
from .errors import ConfigurationError, DataError
from .geometry import Intrinsics, Pose, pixel_ray_directions
from .imageio import labels_to_rgb, write_pgm, write_ppm
from .kernels import get_kernels

CAMERA_HEIGHT_M = 1.55

DEFAULT_CLASSES = (
    ("road", (128, 64, 128)),
    ("sidewalk", (244, 35, 232)),
    ("terrain", (152, 251, 152)),
    ("building", (70, 70, 70)),
    ("car", (0, 0, 142)),
    ("void", (0, 0, 0)),
)


@dataclass(frozen=True)
class SceneClass:
    name: str
    rgb: tuple[int, int, int]


@dataclass(frozen=True)
class Box:
    """Yaw-rotated rectangular prism; size holds full extents (x, y, z)."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float
    cls: int

    def footprint_half(self) -> tuple[float, float]:
        return self.size[0] / 2.0, self.size[2] / 2.0

    def top_y(self) -> float:
        # y points down, so the highest point has the smallest y
        return self.center[1] - self.size[1] / 2.0

    def bottom_y(self) -> float:
        return self.center[1] + self.size[1] / 2.0


def _rect_axes(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, s], [-s, c]])


def _rects_overlap(b1: Box, b2: Box, tol: float = 1e-9) -> bool:
    """Strict interior overlap of two yaw-rotated footprints (SAT)."""
    c1 = np.array([b1.center[0], b1.center[2]])
    c2 = np.array([b2.center[0], b2.center[2]])
    h1 = np.array(b1.footprint_half())
    h2 = np.array(b2.footprint_half())
    a1 = _rect_axes(b1.yaw)
    a2 = _rect_axes(b2.yaw)
    for axis in (*a1, *a2):
        r1 = h1 @ np.abs(a1 @ axis)
        r2 = h2 @ np.abs(a2 @ axis)
        if abs((c1 - c2) @ axis) >= r1 + r2 - tol:
            return False
    return True


@dataclass
class Scene:
    """Ground plane at y = ground_y (camera height) plus class-tagged boxes."""

    ground_y: float
    boxes: list[Box]
    classes: list[SceneClass] = field(
        default_factory=lambda: [SceneClass(n, c) for n, c in DEFAULT_CLASSES])

    def __post_init__(self):
        if len(self.classes) < 3:
            raise ConfigurationError("need at least ground, one solid class, and void")
        n = len(self.classes)
        for b in self.boxes:
            if not 0 <= b.cls < n:
                raise ConfigurationError(f"box class {b.cls} outside the palette")
            if b.bottom_y() > self.ground_y + 1e-9:
                raise ConfigurationError("boxes must rest on or above the ground")
            if min(b.size) <= 0:
                raise ConfigurationError("box sizes must be positive")
        for i, a in enumerate(self.boxes):
            for b in self.boxes[i + 1:]:
                if _rects_overlap(a, b):
                    y_gap = (min(a.bottom_y(), b.bottom_y())
                             - max(a.top_y(), b.top_y()))
                    if y_gap > 1e-9:
                        raise ConfigurationError("boxes must not overlap")
                    if a.cls != b.cls:
                        raise ConfigurationError(
                            "boxes of different classes share a ground pillar")

    @property
    def ground_class(self) -> int:
        return 0

    @property
    def void_class(self) -> int:
        return len(self.classes) - 1

    @property
    def bev_class_count(self) -> int:
        """Grid classes: every palette entry except void."""
        return self.void_class

    def palette(self) -> np.ndarray:
        return np.array([c.rgb for c in self.classes], dtype=np.uint8)

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Packed box rows [cx cy cz hx hy hz cos_yaw sin_yaw] and classes."""
        geo = np.zeros((len(self.boxes), 8))
        cls = np.zeros(len(self.boxes), dtype=np.int32)
        for i, b in enumerate(self.boxes):
            geo[i, :3] = b.center
            geo[i, 3:6] = np.asarray(b.size) / 2.0
            geo[i, 6] = math.cos(b.yaw)
            geo[i, 7] = math.sin(b.yaw)
            cls[i] = b.cls
        return geo, cls


def generate_scene(seed: int, difficulty: str) -> Scene:
    """Deterministic scene of the requested difficulty.

    flat: ground only. static: adds sidewalk/terrain slabs, building
    walls, and parked cars. occlusion: static plus a large box near the
    camera that shadows labeled area behind it.
    """
    if difficulty not in ("flat", "static", "occlusion"):
        raise ConfigurationError(f"unknown difficulty {difficulty!r}")
    rng = np.random.default_rng(seed)
    g = CAMERA_HEIGHT_M
    boxes: list[Box] = []
    if difficulty == "flat":
        return Scene(g, boxes)

    def slab(x0, x1, z0, z1, height, cls):
        return Box(((x0 + x1) / 2, g - height / 2, (z0 + z1) / 2),
                   (x1 - x0, height, z1 - z0), 0.0, cls)

    # sidewalk and terrain strips flanking the road
    for side in (-1, 1):
        boxes.append(slab(*sorted((side * 4.6, side * 7.6)), 3.5, 27.0, 0.06, 1))
        boxes.append(slab(*sorted((side * 8.0, side * 11.0)), 3.5, 27.0, 0.04, 2))
    # building walls at the lateral edges
    for side in (-1, 1):
        z0 = 6.0 + rng.uniform(0.0, 1.0)
        boxes.append(Box((side * 12.0, g - 3.5, (z0 + 25.0) / 2),
                         (1.4, 7.0, 25.0 - z0), 0.0, 3))
    # parked cars on the road, clear of the camera path at x ~ 0; the
    # occlusion variant keeps the first car inside the occluder's shadow
    if difficulty == "occlusion":
        car_slots = [(2.9, 12.5), (3.1, 17.5), (-3.1, 13.0)]
    else:
        car_slots = [(3.1, 9.5), (3.1, 17.5), (-3.1, 13.0)]
    for x_c, z_c in car_slots:
        x_j = x_c + rng.uniform(-0.15, 0.15)
        z_j = z_c + rng.uniform(-0.6, 0.6)
        yaw = rng.uniform(-0.05, 0.05)
        boxes.append(Box((x_j, g - 0.72, z_j), (1.7, 1.44, 4.0), yaw, 4))
    if difficulty == "occlusion":
        # large near-camera occluder beside the camera path
        boxes.append(Box((2.7, g - 1.3, 7.0), (3.2, 2.6, 1.8), 0.0, 3))
    return Scene(g, boxes)


def straight_trajectory(n: int, step_m: float, yaw_rate: float = 0.0) -> list[Pose]:
    """Constant-curvature forward path; frame i sits at arc length i*step_m
    looking along the tangent. yaw_rate is heading change per meter."""
    if n < 2:
        raise ConfigurationError("need at least 2 frames")
    if step_m <= 0:
        raise ConfigurationError("step_m must be positive")
    poses = []
    for i in range(n):
        s = i * step_m
        heading = yaw_rate * s
        if abs(yaw_rate) < 1e-12:
            x, z = 0.0, s
        else:
            x = (1.0 - math.cos(yaw_rate * s)) / yaw_rate
            z = math.sin(yaw_rate * s) / yaw_rate
        c, si = math.cos(heading), math.sin(heading)
        rot = np.array([[c, 0.0, si], [0.0, 1.0, 0.0], [-si, 0.0, c]])
        poses.append(Pose(rot, np.array([x, 0.0, z])))
    return poses


def _raycast(scene: Scene, pose: Pose, intr: Intrinsics):
    """First-hit ray parameter and class per pixel, world-space rays."""
    us, vs = np.meshgrid(np.arange(intr.width) + 0.5,
                         np.arange(intr.height) + 0.5)
    dirs_cam = pixel_ray_directions(intr, us.reshape(-1), vs.reshape(-1))
    dirs_w = dirs_cam @ pose.rotation.T
    origins = np.broadcast_to(pose.translation, dirs_w.shape)
    t, cls = get_kernels().first_hit(
        np.ascontiguousarray(origins), np.ascontiguousarray(dirs_w),
        scene.ground_y, *(np.ascontiguousarray(a) for a in scene.to_arrays()))
    z = t * dirs_cam[:, 2]   # view-frame depth of the hit
    return (z.reshape(intr.height, intr.width),
            cls.reshape(intr.height, intr.width))


def gt_perspective_seg(scene: Scene, pose: Pose, intr: Intrinsics,
                       z_far: float) -> np.ndarray:
    """Exact first-hit segmentation; sky and hits beyond z_far are void."""
    z, cls = _raycast(scene, pose, intr)
    labels = np.where(np.isfinite(z) & (z < z_far) & (cls >= 0),
                      cls, scene.void_class)
    return labels.astype(np.uint8)


def render_depth_image(scene: Scene, pose: Pose, intr: Intrinsics,
                       z_far: float, z_near: float = 0.0) -> np.ndarray:
    """Per-pixel first-hit view depth, z_far where nothing is hit before it."""
    z, cls = _raycast(scene, pose, intr)
    depth = np.where(np.isfinite(z) & (z < z_far) & (cls >= 0), z, z_far)
    return np.maximum(depth, z_near)


def gt_bev(scene: Scene, spec: BevSpec, frame_pose: Pose) -> np.ndarray:
    """Top-down label grid: per cell, the class of the tallest solid whose
    footprint contains the cell center; ground class otherwise."""
    centers = spec.cell_centers()                      # (rows, cols, 2) (x, z)
    pts = np.zeros(centers.shape[:2] + (3,))
    pts[..., 0] = centers[..., 0]
    pts[..., 2] = centers[..., 1]
    world = frame_pose.apply(pts.reshape(-1, 3))
    xw, zw = world[:, 0], world[:, 2]
    labels = np.full(xw.shape, scene.ground_class, dtype=np.uint8)
    best_top = np.full(xw.shape, np.inf)
    for b in scene.boxes:
        c, s = math.cos(b.yaw), math.sin(b.yaw)
        dx = xw - b.center[0]
        dz = zw - b.center[2]
        lx = c * dx - s * dz
        lz = s * dx + c * dz
        hx, hz = b.footprint_half()
        inside = (np.abs(lx) <= hx) & (np.abs(lz) <= hz)
        taller = inside & (b.top_y() < best_top)
        labels[taller] = b.cls
        best_top[taller] = b.top_y()
    return labels.reshape(spec.rows, spec.cols)


def corrupt_labels(seg: np.ndarray, rate: float, rng: np.random.Generator,
                   n_classes: int) -> np.ndarray:
    """Replace each pixel with a uniformly random other class with
    probability rate."""
    if not 0 <= rate <= 1:
        raise ConfigurationError("corruption rate must lie in [0, 1]")
    seg = np.asarray(seg)
    flip = rng.random(seg.shape) < rate
    repl = rng.integers(0, n_classes - 1, size=seg.shape)
    repl = repl + (repl >= seg)
    return np.where(flip, repl, seg).astype(seg.dtype)


@dataclass
class Sequence:
    """Frame poses, shared intrinsics, and per-frame label images."""

    poses: list[Pose]
    intr: Intrinsics
    seg_images: list[np.ndarray]

    def __post_init__(self):
        if len(self.poses) < 2:
            raise ConfigurationError("a sequence needs at least 2 frames")
        if len(self.poses) != len(self.seg_images):
            raise ConfigurationError("one segmentation per pose required")
        for img in self.seg_images:
            if img.shape != (self.intr.height, self.intr.width):
                raise ConfigurationError("segmentation size does not match intrinsics")

    def __len__(self) -> int:
        return len(self.poses)


def default_intrinsics() -> Intrinsics:
    return Intrinsics(fx=128.0, fy=128.0, cx=128.0, cy=64.0, width=256, height=128)


def make_sequence(scene: Scene, intr: Intrinsics, n: int, step_m: float,
                  z_far: float, yaw_rate: float = 0.0,
                  corruption_rate: float = 0.0,
                  rng: np.random.Generator | None = None) -> Sequence:
    """Trajectory plus exact (optionally corrupted) segmentations."""
    poses = straight_trajectory(n, step_m, yaw_rate)
    segs = []
    for pose in poses:
        seg = gt_perspective_seg(scene, pose, intr, z_far)
        if corruption_rate > 0:
            if rng is None:
                raise ConfigurationError("label corruption requires a generator")
            seg = corrupt_labels(seg, corruption_rate, rng, len(scene.classes))
        segs.append(seg)
    return Sequence(poses, intr, segs)


def save_scene_json(path, scene: Scene) -> None:
    doc = {
        "ground_y": scene.ground_y,
        "classes": [{"name": c.name, "rgb": list(c.rgb)} for c in scene.classes],
        "boxes": [{"center": list(b.center), "size": list(b.size),
                   "yaw": b.yaw, "class": b.cls} for b in scene.boxes],
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scene_json(path) -> Scene:
    with open(path, "r", encoding="ascii") as fh:
        doc = json.load(fh)
    try:
        classes = [SceneClass(c["name"], tuple(int(v) for v in c["rgb"]))
                   for c in doc["classes"]]
        boxes = [Box(tuple(float(v) for v in b["center"]),
                     tuple(float(v) for v in b["size"]),
                     float(b["yaw"]), int(b["class"]))
                 for b in doc["boxes"]]
        scene = Scene(float(doc["ground_y"]), boxes, classes)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed scene file ({exc})") from exc
    except ConfigurationError as exc:
        raise DataError(f"{path}: invalid scene ({exc})") from exc
    return scene


def save_labels(path_pgm, labels: np.ndarray, palette: np.ndarray | None = None,
                path_ppm=None) -> None:
    """8-bit class-index PGM, optionally with a palette PPM alongside."""
    write_pgm(path_pgm, labels.astype(np.uint8), maxval=255)
    if path_ppm is not None:
        if palette is None:
            raise ConfigurationError("palette required for the PPM visualization")
        write_ppm(path_ppm, labels_to_rgb(labels, palette))
