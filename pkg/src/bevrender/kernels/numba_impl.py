"""Numba-compiled versions of the hot inner loops.

Same contracts as numpy_impl; see there for shapes. Per-element loops
are parallelized with prange where outputs are independent, so results
do not depend on the thread count. The gradient scatter stays serial:
different samples may hit the same cell.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def integrate_rays(sigmas, deltas):
    n_rays, m = sigmas.shape
    alphas = np.empty((n_rays, m))
    trans = np.empty((n_rays, m))
    weights = np.empty((n_rays, m))
    for r in prange(n_rays):
        t = 1.0
        for i in range(m):
            a = -np.expm1(-sigmas[r, i] * deltas[r, i])
            alphas[r, i] = a
            trans[r, i] = t
            weights[r, i] = t * a
            t *= 1.0 - a
    return alphas, trans, weights


@njit(cache=True, parallel=True)
def composite_probs(probs_grid, rows, cols, inb, weights):
    n_rays, m = rows.shape
    n_classes = probs_grid.shape[2]
    lhat = np.zeros((n_rays, n_classes))
    oob = np.zeros(n_rays)
    for r in prange(n_rays):
        for i in range(m):
            w = weights[r, i]
            if inb[r, i]:
                for c in range(n_classes):
                    lhat[r, c] += w * probs_grid[rows[r, i], cols[r, i], c]
            else:
                oob[r] += w
    return lhat, oob


@njit(cache=True)
def scatter_ce_grad(rows, cols, inb, weights, coeffs, targets, dprobs):
    n_rays, m = rows.shape
    for r in range(n_rays):
        coeff = coeffs[r]
        if coeff == 0.0:
            continue
        t = targets[r]
        for i in range(m):
            if inb[r, i]:
                dprobs[rows[r, i], cols[r, i], t] += weights[r, i] * coeff


@njit(cache=True, parallel=True)
def scene_sigma(points, ground_y, boxes, sigma_solid):
    n = points.shape[0]
    n_boxes = boxes.shape[0]
    out = np.zeros(n)
    for p in prange(n):
        x, y, z = points[p, 0], points[p, 1], points[p, 2]
        if y >= ground_y:
            out[p] = sigma_solid
            continue
        for b in range(n_boxes):
            dx = x - boxes[b, 0]
            dy = y - boxes[b, 1]
            dz = z - boxes[b, 2]
            c = boxes[b, 6]
            s = boxes[b, 7]
            lx = c * dx - s * dz
            lz = s * dx + c * dz
            if abs(lx) <= boxes[b, 3] and abs(dy) <= boxes[b, 4] and abs(lz) <= boxes[b, 5]:
                out[p] = sigma_solid
                break
    return out


@njit(cache=True, parallel=True)
def first_hit(origins, dirs, ground_y, boxes, box_classes):
    n = origins.shape[0]
    n_boxes = boxes.shape[0]
    best_t = np.full(n, np.inf)
    best_cls = np.full(n, -1, dtype=np.int32)
    for p in prange(n):
        ox, oy, oz = origins[p, 0], origins[p, 1], origins[p, 2]
        dx, dy, dz = dirs[p, 0], dirs[p, 1], dirs[p, 2]
        bt = np.inf
        bc = -1
        if dy > 0.0:
            tg = (ground_y - oy) / dy
            if tg > 0.0:
                bt = tg
                bc = 0
        for b in range(n_boxes):
            c = boxes[b, 6]
            s = boxes[b, 7]
            lox = c * (ox - boxes[b, 0]) - s * (oz - boxes[b, 2])
            loy = oy - boxes[b, 1]
            loz = s * (ox - boxes[b, 0]) + c * (oz - boxes[b, 2])
            ldx = c * dx - s * dz
            ldz = s * dx + c * dz
            t_enter = -np.inf
            t_exit = np.inf
            ok = True
            for lo, ld, h in ((lox, ldx, boxes[b, 3]),
                              (loy, dy, boxes[b, 4]),
                              (loz, ldz, boxes[b, 5])):
                if ld == 0.0:
                    if abs(lo) > h:
                        ok = False
                        break
                else:
                    t1 = (-h - lo) / ld
                    t2 = (h - lo) / ld
                    if t1 > t2:
                        t1, t2 = t2, t1
                    if t1 > t_enter:
                        t_enter = t1
                    if t2 < t_exit:
                        t_exit = t2
            if ok and t_enter <= t_exit and t_enter > 0.0 and t_enter < bt:
                bt = t_enter
                bc = box_classes[b]
        best_t[p] = bt
        best_cls[p] = bc
    return best_t, best_cls


@njit(cache=True, parallel=True)
def render_scene_rays(dirs, depths, deltas, cast_rot, cast_t, ground_y, boxes,
                      sigma_solid, z_near, z_far, kr_rot, kr_t,
                      origin_x, origin_z, cell_x, cell_z, n_rows, n_cols,
                      probs_grid):
    """Fused per-ray pass for rays cast from inside their own frustum:
    density (scene occupancy clipped to the cast frustum), integration,
    reference-frame cell lookup, and compositing in one sweep."""
    n_rays, m = depths.shape
    n_boxes = boxes.shape[0]
    n_classes = probs_grid.shape[2]
    sigmas = np.empty((n_rays, m))
    alphas = np.empty((n_rays, m))
    trans = np.empty((n_rays, m))
    weights = np.empty((n_rays, m))
    rows = np.zeros((n_rays, m), dtype=np.int64)
    cols = np.zeros((n_rays, m), dtype=np.int64)
    inb = np.zeros((n_rays, m), dtype=np.bool_)
    lhat = np.zeros((n_rays, n_classes))
    oob = np.zeros(n_rays)
    for r in prange(n_rays):
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        t_acc = 1.0
        for i in range(m):
            dist = depths[r, i]
            px, py, pz = dx * dist, dy * dist, dz * dist
            sig = 0.0
            if z_near <= pz <= z_far:
                wx = cast_rot[0, 0] * px + cast_rot[0, 1] * py + cast_rot[0, 2] * pz + cast_t[0]
                wy = cast_rot[1, 0] * px + cast_rot[1, 1] * py + cast_rot[1, 2] * pz + cast_t[1]
                wz = cast_rot[2, 0] * px + cast_rot[2, 1] * py + cast_rot[2, 2] * pz + cast_t[2]
                if wy >= ground_y:
                    sig = sigma_solid
                else:
                    for b in range(n_boxes):
                        bdx = wx - boxes[b, 0]
                        bdy = wy - boxes[b, 1]
                        bdz = wz - boxes[b, 2]
                        c = boxes[b, 6]
                        s = boxes[b, 7]
                        lx = c * bdx - s * bdz
                        lz = s * bdx + c * bdz
                        if (abs(lx) <= boxes[b, 3] and abs(bdy) <= boxes[b, 4]
                                and abs(lz) <= boxes[b, 5]):
                            sig = sigma_solid
                            break
            sigmas[r, i] = sig
            a = -np.expm1(-sig * deltas[r, i])
            w = t_acc * a
            alphas[r, i] = a
            trans[r, i] = t_acc
            weights[r, i] = w
            t_acc *= 1.0 - a

            rx = kr_rot[0, 0] * px + kr_rot[0, 1] * py + kr_rot[0, 2] * pz + kr_t[0]
            rz = kr_rot[2, 0] * px + kr_rot[2, 1] * py + kr_rot[2, 2] * pz + kr_t[2]
            f_col = np.floor((rx - origin_x) / cell_x)
            f_row = np.floor((rz - origin_z) / cell_z)
            if 0 <= f_row < n_rows and 0 <= f_col < n_cols and rz >= 0.0:
                row = np.int64(f_row)
                col = np.int64(f_col)
                rows[r, i] = row
                cols[r, i] = col
                inb[r, i] = True
                if w != 0.0:
                    for cc in range(n_classes):
                        lhat[r, cc] += w * probs_grid[row, col, cc]
            else:
                oob[r] += w
    return sigmas, alphas, trans, weights, rows, cols, inb, lhat, oob


@njit(cache=True, parallel=True)
def render_shadow_rays(dirs, depths, deltas, cast_rot, cast_t, ref_rot_inv,
                       ref_t, depth_img, fx, fy, cx, cy, width, height,
                       sigma_solid, z_near, z_far, kr_rot, kr_t,
                       origin_x, origin_z, cell_x, cell_z, n_rows, n_cols,
                       probs_grid):
    """Fused pass like render_scene_rays, but the density comes from a
    single-view shadow field: solid at and behind the reference depth map
    inside the reference frustum, empty elsewhere."""
    n_rays, m = depths.shape
    n_classes = probs_grid.shape[2]
    sigmas = np.empty((n_rays, m))
    alphas = np.empty((n_rays, m))
    trans = np.empty((n_rays, m))
    weights = np.empty((n_rays, m))
    rows = np.zeros((n_rays, m), dtype=np.int64)
    cols = np.zeros((n_rays, m), dtype=np.int64)
    inb = np.zeros((n_rays, m), dtype=np.bool_)
    lhat = np.zeros((n_rays, n_classes))
    oob = np.zeros(n_rays)
    for r in prange(n_rays):
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        t_acc = 1.0
        for i in range(m):
            dist = depths[r, i]
            px, py, pz = dx * dist, dy * dist, dz * dist
            wx = cast_rot[0, 0] * px + cast_rot[0, 1] * py + cast_rot[0, 2] * pz + cast_t[0]
            wy = cast_rot[1, 0] * px + cast_rot[1, 1] * py + cast_rot[1, 2] * pz + cast_t[1]
            wz = cast_rot[2, 0] * px + cast_rot[2, 1] * py + cast_rot[2, 2] * pz + cast_t[2]
            gx = wx - ref_t[0]
            gy = wy - ref_t[1]
            gz = wz - ref_t[2]
            lx = ref_rot_inv[0, 0] * gx + ref_rot_inv[0, 1] * gy + ref_rot_inv[0, 2] * gz
            ly = ref_rot_inv[1, 0] * gx + ref_rot_inv[1, 1] * gy + ref_rot_inv[1, 2] * gz
            lz = ref_rot_inv[2, 0] * gx + ref_rot_inv[2, 1] * gy + ref_rot_inv[2, 2] * gz
            sig = 0.0
            if z_near <= lz <= z_far:
                u = fx * lx / lz + cx
                v = fy * ly / lz + cy
                if 0.0 <= u < width and 0.0 <= v < height:
                    if lz >= depth_img[np.int64(np.floor(v)), np.int64(np.floor(u))]:
                        sig = sigma_solid
            sigmas[r, i] = sig
            a = -np.expm1(-sig * deltas[r, i])
            w = t_acc * a
            alphas[r, i] = a
            trans[r, i] = t_acc
            weights[r, i] = w
            t_acc *= 1.0 - a

            rx = kr_rot[0, 0] * px + kr_rot[0, 1] * py + kr_rot[0, 2] * pz + kr_t[0]
            rz = kr_rot[2, 0] * px + kr_rot[2, 1] * py + kr_rot[2, 2] * pz + kr_t[2]
            f_col = np.floor((rx - origin_x) / cell_x)
            f_row = np.floor((rz - origin_z) / cell_z)
            if 0 <= f_row < n_rows and 0 <= f_col < n_cols and rz >= 0.0:
                row = np.int64(f_row)
                col = np.int64(f_col)
                rows[r, i] = row
                cols[r, i] = col
                inb[r, i] = True
                if w != 0.0:
                    for cc in range(n_classes):
                        lhat[r, cc] += w * probs_grid[row, col, cc]
            else:
                oob[r] += w
    return sigmas, alphas, trans, weights, rows, cols, inb, lhat, oob
