"""The trainable top-down class grid: logits over a metric ground rectangle.

Cells are addressed (row, col) with rows along the forward (z) axis and
cols along the lateral (x) axis of the reference camera. Sampling is
nearest-neighbor; probabilities come from a per-cell softmax over logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from struct import pack, unpack

import numpy as np

from .errors import ConfigurationError, DataError

_MAGIC = b"BEVG"


@dataclass(frozen=True)
class BevSpec:
    """Geometry of the grid: cell counts, metric extents, near-left origin.

    origin_x/origin_z are the reference-camera-frame coordinates of the
    corner of cell (0, 0). Cells must be square within 1%.
    """

    rows: int
    cols: int
    depth_extent: float
    lateral_extent: float
    origin_x: float
    origin_z: float

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise ConfigurationError("cell counts must be positive")
        if self.depth_extent <= 0 or self.lateral_extent <= 0:
            raise ConfigurationError("extents must be positive")
        cz, cx = self.cell_depth, self.cell_lateral
        if abs(cz - cx) > 0.01 * max(cz, cx):
            raise ConfigurationError(
                f"cells must be square within 1% (got {cz:.6g} x {cx:.6g} m)")

    @property
    def cell_depth(self) -> float:
        return self.depth_extent / self.rows

    @property
    def cell_lateral(self) -> float:
        return self.lateral_extent / self.cols

    @property
    def cell_size(self) -> float:
        return self.cell_depth

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        """(x, z) of the center of cell (row, col), reference-camera frame."""
        return (self.origin_x + (col + 0.5) * self.cell_lateral,
                self.origin_z + (row + 0.5) * self.cell_depth)

    def cell_centers(self) -> np.ndarray:
        """(rows, cols, 2) array of (x, z) cell centers."""
        xs = self.origin_x + (np.arange(self.cols) + 0.5) * self.cell_lateral
        zs = self.origin_z + (np.arange(self.rows) + 0.5) * self.cell_depth
        xg, zg = np.meshgrid(xs, zs)
        return np.stack([xg, zg], axis=-1)


@dataclass(frozen=True)
class CellRef:
    row: int
    col: int
    in_bounds: bool


class BevGrid:
    """spec plus a (rows, cols, C) logit array, float64 in memory."""

    def __init__(self, spec: BevSpec, logits: np.ndarray):
        logits = np.asarray(logits, dtype=np.float64)
        if logits.ndim != 3 or logits.shape[:2] != (spec.rows, spec.cols):
            raise ConfigurationError(
                f"logits shape {logits.shape} does not match spec "
                f"{spec.rows}x{spec.cols}")
        if logits.shape[2] < 2:
            raise ConfigurationError("need at least 2 classes")
        if not np.isfinite(logits).all():
            raise ConfigurationError("logits must be finite")
        self.spec = spec
        self.logits = logits

    @property
    def class_count(self) -> int:
        return self.logits.shape[2]

    @staticmethod
    def zeros(spec: BevSpec, class_count: int) -> "BevGrid":
        return BevGrid(spec, np.zeros((spec.rows, spec.cols, class_count)))


def softmax_probs(logits_or_grid) -> np.ndarray:
    """Per-cell softmax, stabilized by max subtraction. Returns (rows, cols, C)."""
    logits = logits_or_grid.logits if isinstance(logits_or_grid, BevGrid) else logits_or_grid
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cells_from_xz(spec: BevSpec, xz: np.ndarray):
    """Vectorized nearest-cell addressing for (..., 2) metric coordinates.

    Returns (rows, cols, in_bounds); rows/cols are floor indices and are
    meaningful only where in_bounds is set.
    """
    xz = np.asarray(xz, dtype=np.float64)
    fc = np.floor((xz[..., 0] - spec.origin_x) / spec.cell_lateral)
    fr = np.floor((xz[..., 1] - spec.origin_z) / spec.cell_depth)
    inb = (fr >= 0) & (fr < spec.rows) & (fc >= 0) & (fc < spec.cols)
    rows = np.where(inb, fr, 0).astype(np.int64)
    cols = np.where(inb, fc, 0).astype(np.int64)
    return rows, cols, inb


def world_to_cell(spec: BevSpec, xz: tuple[float, float]) -> CellRef:
    """Nearest-cell lookup for one (x, z) point; total over the plane."""
    row = int(np.floor((xz[1] - spec.origin_z) / spec.cell_depth))
    col = int(np.floor((xz[0] - spec.origin_x) / spec.cell_lateral))
    inb = 0 <= row < spec.rows and 0 <= col < spec.cols
    return CellRef(row, col, inb)


def sample_nearest(probs: np.ndarray, spec: BevSpec,
                   xz: tuple[float, float]) -> tuple[np.ndarray, CellRef]:
    """Class probabilities at the nearest cell; uniform 1/C out of bounds.

    The out-of-bounds value never feeds the loss; the rendered
    out-of-bounds indicator accounts for those samples.
    """
    cell = world_to_cell(spec, xz)
    n_classes = probs.shape[2]
    if cell.in_bounds:
        return probs[cell.row, cell.col].copy(), cell
    return np.full(n_classes, 1.0 / n_classes), cell


def argmax_map(grid: BevGrid) -> np.ndarray:
    """Per-cell argmax over logits; ties go to the lowest class index."""
    return np.argmax(grid.logits, axis=-1).astype(np.uint8)


def save_bev(path, grid: BevGrid) -> None:
    """Binary grid file: magic, u32 rows/cols/C, f64 cell/origin, f32 logits.

    Logits are row-major, class-fastest, little-endian.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(pack("<III", grid.spec.rows, grid.spec.cols, grid.class_count))
        fh.write(pack("<ddd", grid.spec.cell_size, grid.spec.origin_x, grid.spec.origin_z))
        fh.write(grid.logits.astype("<f4").tobytes())


def load_bev(path) -> BevGrid:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise DataError(f"{path}: bad magic at offset 0 (expected BEVG)")
    if len(raw) < 40:
        raise DataError(f"{path}: truncated header, file ends at offset {len(raw)}")
    rows, cols, n_classes = unpack("<III", raw[4:16])
    cell, ox, oz = unpack("<ddd", raw[16:40])
    expected = 40 + rows * cols * n_classes * 4
    if len(raw) != expected:
        raise DataError(
            f"{path}: expected {expected} bytes for {rows}x{cols}x{n_classes} "
            f"grid, file ends at offset {len(raw)}")
    logits = np.frombuffer(raw[40:], dtype="<f4").astype(np.float64)
    spec = BevSpec(rows, cols, rows * cell, cols * cell, ox, oz)
    return BevGrid(spec, logits.reshape(rows, cols, n_classes))
