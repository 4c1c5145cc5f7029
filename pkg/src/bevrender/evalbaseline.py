"""IoU evaluation of top-down label grids and the flat-ground IPM baseline.

Scoring runs over the grid's semantic classes; the void label only appears
as a prediction (off-image warp targets) and in the evaluation mask, never
as a scored class. The mask excludes cells whose ground truth is void.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bevgrid import BevSpec
from .errors import ConfigurationError, DataError
from .geometry import Intrinsics


@dataclass
class ConfusionMatrix:
    """counts[gt, pred] over evaluated cells; labels up to n_labels - 1."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray,
              n_labels: int | None = None) -> ConfusionMatrix:
    """Tally gt/pred label pairs over mask-true cells."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise DataError(
            f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    if n_labels is None:
        n_labels = int(max(pred.max(initial=0), gt.max(initial=0))) + 1
    p = pred[mask].astype(np.int64)
    g = gt[mask].astype(np.int64)
    counts = np.bincount(g * n_labels + p, minlength=n_labels * n_labels)
    return ConfusionMatrix(counts.reshape(n_labels, n_labels))


def iou_scores(m: ConfusionMatrix, scored_classes: int | None = None):
    """Per-class IoU and their mean.

    Returns (ious, miou): ious has one entry per scored class, NaN for
    classes absent from both prediction and ground truth; those are
    excluded from the mean.
    """
    n = m.counts.shape[0] if scored_classes is None else scored_classes
    tp = np.diag(m.counts)[:n].astype(np.float64)
    gt_tot = m.counts.sum(axis=1)[:n].astype(np.float64)
    pred_tot = m.counts.sum(axis=0)[:n].astype(np.float64)
    union = gt_tot + pred_tot - tp
    ious = np.full(n, np.nan)
    present = union > 0
    ious[present] = tp[present] / union[present]
    miou = float(np.nanmean(ious)) if present.any() else math.nan
    return ious, miou


def evaluation_mask(gt: np.ndarray, void_class: int) -> np.ndarray:
    """Cells that count: inside the rectangle and not void in the GT."""
    return np.asarray(gt) != void_class


def ipm_warp(seg: np.ndarray, intr: Intrinsics, cam_height: float, pitch: float,
             spec: BevSpec, void_class: int) -> np.ndarray:
    """Backward inverse-perspective warp of a perspective label image.

    Every grid cell center is lifted to the flat-ground point
    (x, cam_height, z) in the camera frame, rotated by the camera pitch,
    and projected through the pinhole; the nearest pixel's label fills the
    cell. Cells projecting off-image or at/behind the horizon become void.
    """
    if cam_height <= 0:
        raise ConfigurationError("cam_height must be positive")
    seg = np.asarray(seg)
    centers = spec.cell_centers()                     # (rows, cols, 2) = (x, z)
    x = centers[..., 0]
    z = centers[..., 1]
    y = np.full_like(x, cam_height)
    cp, sp = math.cos(pitch), math.sin(pitch)
    yc = cp * y - sp * z
    zc = sp * y + cp * z
    out = np.full(x.shape, void_class, dtype=np.uint8)
    front = zc > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * x / zc + intr.cx
        v = intr.fy * yc / zc + intr.cy
    ok = front & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    out[ok] = seg[np.floor(v[ok]).astype(np.int64), np.floor(u[ok]).astype(np.int64)]
    return out


def metrics_report(pred: np.ndarray, gt: np.ndarray, void_class: int,
                   class_names: list[str]) -> dict:
    """JSON-ready summary: per-class IoU, mIoU, evaluated cell count."""
    mask = evaluation_mask(gt, void_class)
    if not mask.any():
        raise DataError("no evaluated cells")
    n_scored = len(class_names)
    m = confusion(pred, gt, mask, n_labels=max(n_scored, void_class + 1))
    ious, miou = iou_scores(m, scored_classes=n_scored)
    per_class = {name: float(ious[i]) for i, name in enumerate(class_names)
                 if not math.isnan(ious[i])}
    return {"per_class": per_class, "miou": miou,
            "evaluated_cells": int(mask.sum())}
