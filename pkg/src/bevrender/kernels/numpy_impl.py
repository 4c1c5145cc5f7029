"""Pure-numpy implementations of the hot inner loops.

Reference semantics for the numba backend; selected with
RENDBEV_BACKEND=numpy. Shapes: R rays, m samples per ray, C classes,
N points, B boxes. Boxes are packed rows
[cx, cy, cz, hx, hy, hz, cos_yaw, sin_yaw] with half extents h*.
"""

from __future__ import annotations

import numpy as np


def integrate_rays(sigmas: np.ndarray, deltas: np.ndarray):
    """Alpha/transmittance/weight arrays, each (R, m).

    alpha_i = 1 - exp(-sigma_i * delta_i)
    T_i     = prod_{j<i} (1 - alpha_j)
    w_i     = T_i * alpha_i
    """
    alphas = -np.expm1(-sigmas * deltas)
    trans = np.cumprod(1.0 - alphas, axis=-1)
    trans = np.concatenate([np.ones_like(trans[..., :1]), trans[..., :-1]], axis=-1)
    weights = trans * alphas
    return alphas, trans, weights


def composite_probs(probs_grid: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                    inb: np.ndarray, weights: np.ndarray):
    """Per-ray rendered class vector and out-of-bounds opacity mass.

    In-bounds samples contribute weight * probs_grid[row, col]; samples
    outside the grid contribute their weight to the oob scalar instead.
    Returns (lhat (R, C), oob (R,)).
    """
    r_safe = np.where(inb, rows, 0)
    c_safe = np.where(inb, cols, 0)
    gathered = probs_grid[r_safe, c_safe]          # (R, m, C)
    wm = weights * inb                             # masked weights
    lhat = np.einsum("rm,rmc->rc", wm, gathered)
    oob = np.sum(weights * ~inb, axis=-1)
    return lhat, oob


def scatter_ce_grad(rows: np.ndarray, cols: np.ndarray, inb: np.ndarray,
                    weights: np.ndarray, coeffs: np.ndarray, targets: np.ndarray,
                    dprobs: np.ndarray) -> None:
    """Accumulate d(loss)/d(prob) into dprobs (rows, cols, C), in place.

    Each in-bounds sample of ray r adds weights[r, i] * coeffs[r] at
    channel targets[r] of its cell. Rays with coeff 0 are skipped.
    """
    active = inb & (coeffs != 0.0)[:, None]
    if not active.any():
        return
    rr = rows[active]
    cc = cols[active]
    vals = (weights * coeffs[:, None])[active]
    tt = np.broadcast_to(targets[:, None], rows.shape)[active]
    np.add.at(dprobs, (rr, cc, tt), vals)


def scene_sigma(points: np.ndarray, ground_y: float, boxes: np.ndarray,
                sigma_solid: float) -> np.ndarray:
    """Density of the analytic scene at world points (N, 3).

    sigma_solid inside any closed solid (ground half-space y >= ground_y
    or any box interior), zero elsewhere.
    """
    inside = points[:, 1] >= ground_y
    for b in range(boxes.shape[0]):
        cx, cy, cz, hx, hy, hz, c, s = boxes[b]
        dx = points[:, 0] - cx
        dy = points[:, 1] - cy
        dz = points[:, 2] - cz
        # rotate into the box frame (inverse yaw about y)
        lx = c * dx - s * dz
        lz = s * dx + c * dz
        inside |= (np.abs(lx) <= hx) & (np.abs(dy) <= hy) & (np.abs(lz) <= hz)
    return np.where(inside, sigma_solid, 0.0)


def first_hit(origins: np.ndarray, dirs: np.ndarray, ground_y: float,
              boxes: np.ndarray, box_classes: np.ndarray):
    """Nearest forward intersection with the ground plane or any box.

    Returns (t (N,), cls (N,)): ray parameter of the hit and the class of
    the hit solid; t = +inf and cls = -1 where nothing is hit.
    """
    n = origins.shape[0]
    best_t = np.full(n, np.inf)
    best_cls = np.full(n, -1, dtype=np.int32)

    dy = dirs[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = (ground_y - origins[:, 1]) / dy
    hit_g = (dy > 0) & (t_ground > 0)
    best_t = np.where(hit_g, t_ground, best_t)
    best_cls = np.where(hit_g, 0, best_cls).astype(np.int32)

    for b in range(boxes.shape[0]):
        cx, cy, cz, hx, hy, hz, c, s = boxes[b]
        ox = origins[:, 0] - cx
        oy = origins[:, 1] - cy
        oz = origins[:, 2] - cz
        lox = c * ox - s * oz
        loz = s * ox + c * oz
        ldx = c * dirs[:, 0] - s * dirs[:, 2]
        ldz = s * dirs[:, 0] + c * dirs[:, 2]

        t_enter = np.full(n, -np.inf)
        t_exit = np.full(n, np.inf)
        ok = np.ones(n, dtype=bool)
        for lo, ld, h in ((lox, ldx, hx), (oy, dy, hy), (loz, ldz, hz)):
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (-h - lo) / ld
                t2 = (h - lo) / ld
            lohi = np.minimum(t1, t2), np.maximum(t1, t2)
            parallel = ld == 0.0
            inside_slab = np.abs(lo) <= h
            ok &= ~parallel | inside_slab
            t_enter = np.where(parallel, t_enter, np.maximum(t_enter, lohi[0]))
            t_exit = np.where(parallel, t_exit, np.minimum(t_exit, lohi[1]))
        hit = ok & (t_enter <= t_exit) & (t_enter > 0) & (t_enter < best_t)
        best_t = np.where(hit, t_enter, best_t)
        best_cls = np.where(hit, box_classes[b], best_cls).astype(np.int32)
    return best_t, best_cls


def _bev_cells(pts_cast, kr_rot, kr_t, origin_x, origin_z, cell_x, cell_z,
               n_rows, n_cols):
    shape = pts_cast.shape[:2]
    flat = pts_cast.reshape(-1, 3) @ kr_rot.T + kr_t
    rx = flat[:, 0].reshape(shape)
    rz = flat[:, 2].reshape(shape)
    f_col = np.floor((rx - origin_x) / cell_x)
    f_row = np.floor((rz - origin_z) / cell_z)
    inb = ((f_row >= 0) & (f_row < n_rows) & (f_col >= 0) & (f_col < n_cols)
           & (rz >= 0.0))
    rows = np.where(inb, f_row, 0).astype(np.int64)
    cols = np.where(inb, f_col, 0).astype(np.int64)
    return rows, cols, inb


def render_scene_rays(dirs, depths, deltas, cast_rot, cast_t, ground_y, boxes,
                      sigma_solid, z_near, z_far, kr_rot, kr_t,
                      origin_x, origin_z, cell_x, cell_z, n_rows, n_cols,
                      probs_grid):
    """Staged equivalent of the fused numba pass (see numba_impl)."""
    n_rays, m = depths.shape
    pts_cast = dirs[:, None, :] * depths[:, :, None]
    z_cast = pts_cast[:, :, 2]
    in_frustum = (z_cast >= z_near) & (z_cast <= z_far)
    sigmas = np.zeros((n_rays, m))
    if in_frustum.any():
        world = pts_cast[in_frustum] @ cast_rot.T + cast_t
        sigmas[in_frustum] = scene_sigma(world, ground_y, boxes, sigma_solid)
    alphas, trans, weights = integrate_rays(sigmas, deltas)
    rows, cols, inb = _bev_cells(pts_cast, kr_rot, kr_t, origin_x, origin_z,
                                 cell_x, cell_z, n_rows, n_cols)
    lhat, oob = composite_probs(probs_grid, rows, cols, inb, weights)
    return sigmas, alphas, trans, weights, rows, cols, inb, lhat, oob


def render_shadow_rays(dirs, depths, deltas, cast_rot, cast_t, ref_rot_inv,
                       ref_t, depth_img, fx, fy, cx, cy, width, height,
                       sigma_solid, z_near, z_far, kr_rot, kr_t,
                       origin_x, origin_z, cell_x, cell_z, n_rows, n_cols,
                       probs_grid):
    """Staged equivalent of the fused numba pass (see numba_impl)."""
    n_rays, m = depths.shape
    pts_cast = dirs[:, None, :] * depths[:, :, None]
    local = (pts_cast.reshape(-1, 3) @ cast_rot.T + cast_t - ref_t) @ ref_rot_inv.T
    lx = local[:, 0]
    ly = local[:, 1]
    lz = local[:, 2]
    sig_flat = np.zeros(n_rays * m)
    front = (lz >= z_near) & (lz <= z_far)
    if front.any():
        u = fx * lx[front] / lz[front] + cx
        v = fy * ly[front] / lz[front] + cy
        ok = (u >= 0) & (u < width) & (v >= 0) & (v < height)
        behind = np.zeros(ok.shape, dtype=bool)
        ui = np.floor(u[ok]).astype(np.int64)
        vi = np.floor(v[ok]).astype(np.int64)
        behind[ok] = lz[front][ok] >= depth_img[vi, ui]
        vals = np.where(behind, sigma_solid, 0.0)
        sig_flat[front] = vals
    sigmas = sig_flat.reshape(n_rays, m)
    alphas, trans, weights = integrate_rays(sigmas, deltas)
    rows, cols, inb = _bev_cells(pts_cast, kr_rot, kr_t, origin_x, origin_z,
                                 cell_x, cell_z, n_rows, n_cols)
    lhat, oob = composite_probs(probs_grid, rows, cols, inb, weights)
    return sigmas, alphas, trans, weights, rows, cols, inb, lhat, oob
