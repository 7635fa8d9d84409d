"""Hot numeric kernels with two interchangeable backends.

The splatting rasterizer and the pyramid patch tracker dominate runtime, so
both carry a numba @njit implementation and a pure-numpy fallback. The
backend is chosen at import time from the SPLATREPAIR_NO_NUMBA environment
variable (set it to 1 to force numpy) and can be switched at runtime with
set_backend(), which the benchmark and the cross-backend tests use.

Both backends implement the same arithmetic in the same per-pixel order;
results agree to floating-point tolerance (libm exp differs by ULPs between
the two paths, so bit-exactness is only guaranteed within one backend).
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(f):
            return f

        return deco if not (args and callable(args[0])) else args[0]


_ENV_DISABLE = os.environ.get("SPLATREPAIR_NO_NUMBA", "0").lower() in ("1", "true", "yes")
_backend = "numpy" if (_ENV_DISABLE or not _HAVE_NUMBA) else "numba"

ALPHA_CLAMP = 0.99
MIN_SPLAT_ALPHA = 1.0 / 255.0
MIN_TRANSMITTANCE = 1e-4
POWER_CUTOFF = -13.0  # exp(-13) ~ 2e-6, far below MIN_SPLAT_ALPHA
LOWPASS_PX = 0.3      # screen-space covariance dilation, keeps sub-pixel splats sane
TILE = 16


def active_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _HAVE_NUMBA:
        raise ValueError("numba is not available")
    _backend = name


# ---------------------------------------------------------------------------
# Rasterizer: front-to-back alpha compositing of projected 2D Gaussians.
# Inputs are already depth-sorted; tile lists keep that order, so per-pixel
# traversal is front-to-back and can stop once transmittance is exhausted.
# ---------------------------------------------------------------------------


def bin_to_tiles(means2d, radii, height, width):
    """CSR tile lists (tile -> sorted gaussian indices) built vectorized."""
    ntx = (width + TILE - 1) // TILE
    nty = (height + TILE - 1) // TILE
    x0 = np.clip(np.floor((means2d[:, 0] - radii) / TILE), 0, ntx - 1).astype(np.int64)
    x1 = np.clip(np.floor((means2d[:, 0] + radii) / TILE), 0, ntx - 1).astype(np.int64)
    y0 = np.clip(np.floor((means2d[:, 1] - radii) / TILE), 0, nty - 1).astype(np.int64)
    y1 = np.clip(np.floor((means2d[:, 1] + radii) / TILE), 0, nty - 1).astype(np.int64)
    spans_x = x1 - x0 + 1
    spans_y = y1 - y0 + 1
    counts = spans_x * spans_y
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, np.int64), np.zeros(ntx * nty + 1, np.int64), ntx, nty
    gauss_ids = np.repeat(np.arange(len(counts), dtype=np.int64), counts)
    # Position of each emitted entry within its gaussian's tile rectangle.
    offs = np.arange(total, dtype=np.int64) - np.repeat(
        np.concatenate([[0], np.cumsum(counts)[:-1]]), counts
    )
    sx = spans_x[gauss_ids]
    tx = x0[gauss_ids] + offs % sx
    ty = y0[gauss_ids] + offs // sx
    tile_ids = ty * ntx + tx
    order = np.lexsort((gauss_ids, tile_ids))
    entries = gauss_ids[order]
    sorted_tiles = tile_ids[order]
    starts = np.searchsorted(sorted_tiles, np.arange(ntx * nty + 1, dtype=np.int64))
    return entries, starts, ntx, nty


@njit(cache=True)
def _rasterize_numba(
    means2d, inv_cov, depths, colors, alphas, radii,
    entries, starts, ntx, nty, height, width,
):
    rgb = np.zeros((height, width, 3))
    acc = np.zeros((height, width))
    dsum = np.zeros((height, width))
    for tyi in range(nty):
        for txi in range(ntx):
            tid = tyi * ntx + txi
            lo = starts[tid]
            hi = starts[tid + 1]
            if lo == hi:
                continue
            py0 = tyi * TILE
            px0 = txi * TILE
            py1 = min(py0 + TILE, height)
            px1 = min(px0 + TILE, width)
            for py in range(py0, py1):
                cy = py + 0.5
                for px in range(px0, px1):
                    cx = px + 0.5
                    t = 1.0
                    r = 0.0
                    g = 0.0
                    b = 0.0
                    a = 0.0
                    d = 0.0
                    for k in range(lo, hi):
                        if t <= MIN_TRANSMITTANCE:
                            break
                        gi = entries[k]
                        dx = cx - means2d[gi, 0]
                        dy = cy - means2d[gi, 1]
                        rad = radii[gi]
                        if dx > rad or dx < -rad or dy > rad or dy < -rad:
                            continue
                        power = -0.5 * (
                            inv_cov[gi, 0] * dx * dx
                            + 2.0 * inv_cov[gi, 1] * dx * dy
                            + inv_cov[gi, 2] * dy * dy
                        )
                        if power < POWER_CUTOFF or power > 0.0:
                            continue
                        av = alphas[gi] * np.exp(power)
                        if av > ALPHA_CLAMP:
                            av = ALPHA_CLAMP
                        if av < MIN_SPLAT_ALPHA:
                            continue
                        w = t * av
                        r += w * colors[gi, 0]
                        g += w * colors[gi, 1]
                        b += w * colors[gi, 2]
                        a += w
                        d += w * depths[gi]
                        t *= 1.0 - av
                    rgb[py, px, 0] = r
                    rgb[py, px, 1] = g
                    rgb[py, px, 2] = b
                    acc[py, px] = a
                    dsum[py, px] = d
    return rgb, acc, dsum


def _rasterize_numpy(
    means2d, inv_cov, depths, colors, alphas, radii,
    entries, starts, ntx, nty, height, width,
):
    rgb = np.zeros((height, width, 3))
    acc = np.zeros((height, width))
    dsum = np.zeros((height, width))
    trans = np.ones((height, width))
    ys = np.arange(height) + 0.5
    xs = np.arange(width) + 0.5
    # Gaussians are globally depth-sorted, so iterating them in order keeps
    # per-pixel compositing front-to-back (same semantics as the tile loop).
    n = len(means2d)
    for gi in range(n):
        rad = radii[gi]
        mx, my = means2d[gi]
        x0 = max(int(np.floor(mx - rad - 0.5)), 0)
        x1 = min(int(np.ceil(mx + rad - 0.5)) + 1, width)
        y0 = max(int(np.floor(my - rad - 0.5)), 0)
        y1 = min(int(np.ceil(my + rad - 0.5)) + 1, height)
        if x0 >= x1 or y0 >= y1:
            continue
        dx = xs[x0:x1][None, :] - mx
        dy = ys[y0:y1][:, None] - my
        a_, b_, c_ = inv_cov[gi]
        power = -0.5 * (a_ * dx * dx + 2.0 * b_ * dx * dy + c_ * dy * dy)
        av = alphas[gi] * np.exp(power)
        np.minimum(av, ALPHA_CLAMP, out=av)
        tblk = trans[y0:y1, x0:x1]
        support = (np.abs(dx) <= rad) & (np.abs(dy) <= rad)
        active = (
            support
            & (power >= POWER_CUTOFF)
            & (power <= 0.0)
            & (av >= MIN_SPLAT_ALPHA)
            & (tblk > MIN_TRANSMITTANCE)
        )
        if not active.any():
            continue
        w = np.where(active, tblk * av, 0.0)
        rgb[y0:y1, x0:x1] += w[:, :, None] * colors[gi]
        acc[y0:y1, x0:x1] += w
        dsum[y0:y1, x0:x1] += w * depths[gi]
        trans[y0:y1, x0:x1] = np.where(active, tblk * (1.0 - av), tblk)
    return rgb, acc, dsum


def rasterize(means2d, inv_cov, depths, colors, alphas, radii, height, width):
    """Composite depth-sorted 2D Gaussians. Returns (rgb, alpha, depth_sum)."""
    means2d = np.ascontiguousarray(means2d, dtype=np.float64)
    inv_cov = np.ascontiguousarray(inv_cov, dtype=np.float64)
    depths = np.ascontiguousarray(depths, dtype=np.float64)
    colors = np.ascontiguousarray(colors, dtype=np.float64)
    alphas = np.ascontiguousarray(alphas, dtype=np.float64)
    radii = np.ascontiguousarray(radii, dtype=np.float64)
    if len(means2d) == 0:
        return (
            np.zeros((height, width, 3)),
            np.zeros((height, width)),
            np.zeros((height, width)),
        )
    if _backend == "numba":
        entries, starts, ntx, nty = bin_to_tiles(means2d, radii, height, width)
        return _rasterize_numba(
            means2d, inv_cov, depths, colors, alphas, radii,
            entries, starts, ntx, nty, height, width,
        )
    return _rasterize_numpy(
        means2d, inv_cov, depths, colors, alphas, radii,
        None, None, 0, 0, height, width,
    )


# ---------------------------------------------------------------------------
# Pyramid patch tracker: one chain step between neighboring orbit frames.
# Positions are in array coordinates (integer value = pixel center) of the
# full-resolution image. Out-of-image samples read as 0 (background).
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _bilinear(img, x, y, c):
    h, w = img.shape[0], img.shape[1]
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    fx = x - x0
    fy = y - y0
    v = 0.0
    for dy in range(2):
        yy = y0 + dy
        if yy < 0 or yy >= h:
            continue
        wy = fy if dy == 1 else 1.0 - fy
        for dx in range(2):
            xx = x0 + dx
            if xx < 0 or xx >= w:
                continue
            wx = fx if dx == 1 else 1.0 - fx
            v += wy * wx * img[yy, xx, c]
    return v


@njit(cache=True)
def _extract_patch_bilinear(img, x, y, half, out):
    k = 2 * half + 1
    for j in range(k):
        for i in range(k):
            for c in range(3):
                out[j, i, c] = _bilinear(img, x + i - half, y + j - half, c)


@njit(cache=True)
def _ssd_at(img, tpl, cx, cy, half):
    h, w = img.shape[0], img.shape[1]
    k = 2 * half + 1
    s = 0.0
    for j in range(k):
        yy = cy + j - half
        for i in range(k):
            xx = cx + i - half
            for c in range(3):
                v = 0.0
                if 0 <= yy < h and 0 <= xx < w:
                    v = img[yy, xx, c]
                d = v - tpl[j, i, c]
                s += d * d
    return s / (3.0 * k * k)


@njit(cache=True)
def _search_level(img, tpl, cx, cy, half, srange, costs):
    side = 2 * srange + 1
    best = 1e30
    bi = 0
    bj = 0
    for j in range(side):
        oy = j - srange
        for i in range(side):
            ox = i - srange
            cost = _ssd_at(img, tpl, cx + ox, cy + oy, half)
            costs[j, i] = cost
            if cost < best:
                best = cost
                bi = i
                bj = j
    return bi, bj, best


@njit(cache=True)
def _parabolic_off(cm, c0, cp):
    denom = cm - 2.0 * c0 + cp
    if denom <= 1e-12:
        return 0.0
    off = 0.5 * (cm - cp) / denom
    if off > 0.5:
        off = 0.5
    elif off < -0.5:
        off = -0.5
    return off


@njit(cache=True)
def _track_step_numba(
    prev0, prev1, prev2, next0, next1, next2,
    pos, half, search_coarse, search_fine,
):
    n = pos.shape[0]
    out = np.empty_like(pos)
    costs = np.empty(n)
    k = 2 * half + 1
    tpl = np.empty((k, k, 3))
    side_c = 2 * search_coarse + 1
    side_f = 2 * search_fine + 1
    grid_c = np.empty((side_c, side_c))
    grid_f = np.empty((side_f, side_f))
    for p in range(n):
        x0 = pos[p, 0]
        y0 = pos[p, 1]
        # level 2 (quarter resolution): wide search around the scaled position
        x2 = (x0 - 1.5) / 4.0
        y2 = (y0 - 1.5) / 4.0
        _extract_patch_bilinear(prev2, x2, y2, half, tpl)
        c2x = int(np.rint(x2))
        c2y = int(np.rint(y2))
        bi, bj, _ = _search_level(next2, tpl, c2x, c2y, half, search_coarse, grid_c)
        nx2 = float(c2x + bi - search_coarse)
        ny2 = float(c2y + bj - search_coarse)
        # level 1: upscale displacement, narrow search
        x1 = (x0 - 0.5) / 2.0
        y1 = (y0 - 0.5) / 2.0
        sx1 = x1 + 2.0 * (nx2 - x2)
        sy1 = y1 + 2.0 * (ny2 - y2)
        _extract_patch_bilinear(prev1, x1, y1, half, tpl)
        c1x = int(np.rint(sx1))
        c1y = int(np.rint(sy1))
        bi, bj, _ = _search_level(next1, tpl, c1x, c1y, half, search_fine, grid_f)
        nx1 = float(c1x + bi - search_fine)
        ny1 = float(c1y + bj - search_fine)
        # level 0: final narrow search + sub-pixel parabola
        sx0 = x0 + 2.0 * (nx1 - x1)
        sy0 = y0 + 2.0 * (ny1 - y1)
        _extract_patch_bilinear(prev0, x0, y0, half, tpl)
        c0x = int(np.rint(sx0))
        c0y = int(np.rint(sy0))
        bi, bj, best = _search_level(next0, tpl, c0x, c0y, half, search_fine, grid_f)
        offx = 0.0
        offy = 0.0
        if 0 < bi < side_f - 1:
            offx = _parabolic_off(grid_f[bj, bi - 1], grid_f[bj, bi], grid_f[bj, bi + 1])
        if 0 < bj < side_f - 1:
            offy = _parabolic_off(grid_f[bj - 1, bi], grid_f[bj, bi], grid_f[bj + 1, bi])
        out[p, 0] = c0x + bi - search_fine + offx
        out[p, 1] = c0y + bj - search_fine + offy
        costs[p] = best
    return out, costs


def _patches_at_int(img, cx, cy, half):
    """Gather (P, k, k, 3) integer-centered windows, zero outside the image."""
    h, w = img.shape[:2]
    k = 2 * half + 1
    offs = np.arange(-half, half + 1)
    ys = cy[:, None] + offs[None, :]
    xs = cx[:, None] + offs[None, :]
    iy = np.clip(ys, 0, h - 1)
    ix = np.clip(xs, 0, w - 1)
    vals = img[iy[:, :, None], ix[:, None, :], :]
    good = ((ys >= 0) & (ys < h))[:, :, None] & ((xs >= 0) & (xs < w))[:, None, :]
    return np.where(good[..., None], vals, 0.0)


def _patches_bilinear(img, x, y, half):
    """Gather (P, k, k, 3) bilinear windows at continuous centers."""
    h, w = img.shape[:2]
    offs = np.arange(-half, half + 1, dtype=np.float64)
    xs = x[:, None, None] + offs[None, None, :]
    ys = y[:, None, None] + offs[None, :, None]
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    p, k = xs.shape[0], xs.shape[2]
    out = np.zeros((p, k, k, 3), dtype=np.float64)
    for dy in (0, 1):
        yy = y0 + dy
        wy = np.where(dy == 1, fy, 1.0 - fy)
        oky = (yy >= 0) & (yy < h)
        for dx in (0, 1):
            xx = x0 + dx
            wx = np.where(dx == 1, fx, 1.0 - fx)
            ok = oky & (xx >= 0) & (xx < w)
            vals = img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1), :]
            out += np.where(ok[..., None], (wy * wx)[..., None] * vals, 0.0)
    return out


def _search_level_numpy(img, tpls, cx, cy, half, srange):
    """Best integer offset per point. Returns (bi, bj, full cost grid)."""
    n = len(cx)
    side = 2 * srange + 1
    k = 2 * half + 1
    grids = np.empty((n, side, side))
    for j in range(side):
        for i in range(side):
            wins = _patches_at_int(img, cx + i - srange, cy + j - srange, half)
            d = wins - tpls
            grids[:, j, i] = np.einsum("pijc,pijc->p", d, d) / (3.0 * k * k)
    flat = grids.reshape(n, -1)
    idx = np.argmin(flat, axis=1)
    return idx % side, idx // side, grids


def _parabolic_off_numpy(cm, c0, cp):
    denom = cm - 2.0 * c0 + cp
    off = np.where(denom > 1e-12, 0.5 * (cm - cp) / np.maximum(denom, 1e-12), 0.0)
    return np.clip(off, -0.5, 0.5)


def _track_step_numpy(
    prev0, prev1, prev2, next0, next1, next2,
    pos, half, search_coarse, search_fine,
):
    n = pos.shape[0]
    x0 = pos[:, 0]
    y0 = pos[:, 1]
    x2 = (x0 - 1.5) / 4.0
    y2 = (y0 - 1.5) / 4.0
    tpl2 = _patches_bilinear(prev2, x2, y2, half)
    c2x = np.rint(x2).astype(np.int64)
    c2y = np.rint(y2).astype(np.int64)
    bi, bj, _ = _search_level_numpy(next2, tpl2, c2x, c2y, half, search_coarse)
    nx2 = (c2x + bi - search_coarse).astype(np.float64)
    ny2 = (c2y + bj - search_coarse).astype(np.float64)

    x1 = (x0 - 0.5) / 2.0
    y1 = (y0 - 0.5) / 2.0
    tpl1 = _patches_bilinear(prev1, x1, y1, half)
    c1x = np.rint(x1 + 2.0 * (nx2 - x2)).astype(np.int64)
    c1y = np.rint(y1 + 2.0 * (ny2 - y2)).astype(np.int64)
    bi, bj, _ = _search_level_numpy(next1, tpl1, c1x, c1y, half, search_fine)
    nx1 = (c1x + bi - search_fine).astype(np.float64)
    ny1 = (c1y + bj - search_fine).astype(np.float64)

    tpl0 = _patches_bilinear(prev0, x0, y0, half)
    c0x = np.rint(x0 + 2.0 * (nx1 - x1)).astype(np.int64)
    c0y = np.rint(y0 + 2.0 * (ny1 - y1)).astype(np.int64)
    bi, bj, grids = _search_level_numpy(next0, tpl0, c0x, c0y, half, search_fine)
    side = 2 * search_fine + 1
    rows = np.arange(n)
    best = grids[rows, bj, bi]
    offx = np.zeros(n)
    offy = np.zeros(n)
    inner_x = (bi > 0) & (bi < side - 1)
    inner_y = (bj > 0) & (bj < side - 1)
    if inner_x.any():
        r = rows[inner_x]
        offx[inner_x] = _parabolic_off_numpy(
            grids[r, bj[inner_x], bi[inner_x] - 1],
            grids[r, bj[inner_x], bi[inner_x]],
            grids[r, bj[inner_x], bi[inner_x] + 1],
        )
    if inner_y.any():
        r = rows[inner_y]
        offy[inner_y] = _parabolic_off_numpy(
            grids[r, bj[inner_y] - 1, bi[inner_y]],
            grids[r, bj[inner_y], bi[inner_y]],
            grids[r, bj[inner_y] + 1, bi[inner_y]],
        )
    out = np.stack(
        [c0x + bi - search_fine + offx, c0y + bj - search_fine + offy], axis=1
    )
    return out, best


def build_pyramid(img: np.ndarray, levels: int = 3) -> list[np.ndarray]:
    """2x2 mean pyramid; level 0 is the input image."""
    pyr = [np.ascontiguousarray(img, dtype=np.float64)]
    for _ in range(levels - 1):
        prev = pyr[-1]
        h = prev.shape[0] // 2 * 2
        w = prev.shape[1] // 2 * 2
        p = prev[:h, :w]
        nxt = 0.25 * (p[0::2, 0::2] + p[1::2, 0::2] + p[0::2, 1::2] + p[1::2, 1::2])
        pyr.append(np.ascontiguousarray(nxt))
    return pyr


def track_step(prev_pyr, next_pyr, pos, half=3, search_coarse=6, search_fine=2):
    """Track points one frame forward. Returns (new positions, match costs).

    Costs are per-pixel-per-channel mean squared RGB differences of the
    best 7x7 match at full resolution.
    """
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    if len(pos) == 0:
        return pos.copy(), np.zeros(0)
    args = (
        prev_pyr[0], prev_pyr[1], prev_pyr[2],
        next_pyr[0], next_pyr[1], next_pyr[2],
        pos, half, search_coarse, search_fine,
    )
    if _backend == "numba":
        return _track_step_numba(*args)
    return _track_step_numpy(*args)
