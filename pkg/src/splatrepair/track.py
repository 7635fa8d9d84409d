"""Point tracking across the orbit video and infill-mask construction.

Two trackers implement one contract. The oracle tracker uses rendered depth
plus camera poses: it lifts each query pixel to its 3D surface point and
reprojects it into every frame, deciding visibility with a z-buffer test.
The photometric tracker chains coarse-to-fine patch matching between
neighboring frames and thresholds the final match cost.

A target view's infill mask marks foreground pixels with no visible
correspondence in any anchor view; those are the pixels the inpainting
stage must fill. Backward masks track from the target to the anchors
(per-pixel decisions); forward masks propagate source pixels onto the
target (scatter decisions), which is exactly why they come out grainy
under a noisy tracker.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DataError, DomainError
from .frames import MASK_THRESHOLD, Frame
from .geometry import OrbitRig, project_unchecked, unproject_unchecked

TRACKERS = ("oracle", "photometric")


@dataclass(frozen=True)
class TrackerParams:
    pyramid_levels: int = 3
    patch_half: int = 3           # 7x7 patches
    search_coarse: int = 8        # +-8 px at the coarsest level (32 px full res)
    search_fine: int = 2
    cost_threshold: float = 0.02  # mean squared RGB per pixel-channel
    # Occlusion tolerance for the z-buffer test, as a fraction of the orbit
    # radius. Splat-rendered depth maps are blurred near grazing incidence,
    # so this sits well above the raw depth noise: a point counts as
    # occluded only when the depth map is clearly in front of it.
    eps_z_scale: float = 0.05


@dataclass
class TrackResult:
    """Trajectories (image coords) and per-frame visibility for each query."""

    positions: np.ndarray      # (P, F, 2) continuous image coordinates
    visible: np.ndarray        # (P, F) bool
    query_pixels: np.ndarray   # (P, 2) integer (x, y) in the start frame
    start_frame: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "start_frame": self.start_frame,
                "query_pixels": self.query_pixels.tolist(),
                "positions": np.round(self.positions, 4).tolist(),
                "visible": self.visible.astype(int).tolist(),
            }
        )


@dataclass
class InfillMask:
    """The region of one view that inpainting must fill.

    propagated_rgb/propagated_known carry colors pulled from the nearest
    anchor along the track for pixels that *are* visible somewhere; the
    inpainting stage uses them as matching context.
    """

    mask: np.ndarray                       # (H, W) bool, subset of the valid mask
    view_index: int
    anchor_set: tuple[int, ...]
    propagated_rgb: np.ndarray | None = None
    propagated_known: np.ndarray | None = None


def _require_depth(frames: list[Frame], idxs) -> None:
    for i in idxs:
        if frames[i].depth is None:
            raise DataError(f"oracle tracker needs depth on frame {i}")


def _chain_orders(n: int, start: int):
    """Frame visit orders walking the ring both ways from `start`.

    Returns two index lists covering all frames; together with `start` they
    partition the ring so every frame is reached along its shorter arc.
    """
    fwd_len = (n - 1 + 1) // 2   # ceil half goes forward
    bwd_len = (n - 1) - fwd_len
    fwd = [(start + k) % n for k in range(1, fwd_len + 1)]
    bwd = [(start - k) % n for k in range(1, bwd_len + 1)]
    return fwd, bwd


def _track_oracle(
    frames: list[Frame],
    rig: OrbitRig,
    start_frame: int,
    qpix: np.ndarray,
    params: TrackerParams,
) -> TrackResult:
    _require_depth(frames, range(len(frames)))
    start = frames[start_frame]
    depth0 = start.depth[qpix[:, 1], qpix[:, 0]]
    if np.any(~np.isfinite(depth0)):
        raise DataError("query point without depth in the start frame")
    centers = np.stack([qpix[:, 0] + 0.5, qpix[:, 1] + 0.5], axis=1)
    world = unproject_unchecked(centers, depth0, rig.cameras[start_frame])
    eps_z = params.eps_z_scale * rig.cameras[start_frame].radius

    n_frames = len(frames)
    p = len(qpix)
    positions = np.zeros((p, n_frames, 2))
    visible = np.zeros((p, n_frames), dtype=bool)
    for fi, (frame, cam) in enumerate(zip(frames, rig.cameras)):
        pix, z = project_unchecked(world, cam)
        positions[:, fi] = pix
        ix = np.floor(pix[:, 0]).astype(np.int64)
        iy = np.floor(pix[:, 1]).astype(np.int64)
        inside = (
            (ix >= 0) & (ix < frame.width) & (iy >= 0) & (iy < frame.height) & (z > 0)
        )
        dmap = frame.depth[np.clip(iy, 0, frame.height - 1), np.clip(ix, 0, frame.width - 1)]
        # One-sided occlusion test: invisible only when the rendered surface
        # is clearly in front of the tracked point.
        unoccluded = np.isfinite(dmap) & (z < dmap + eps_z)
        visible[:, fi] = inside & unoccluded
    return TrackResult(positions, visible, qpix, start_frame)


def _track_photometric(
    frames: list[Frame],
    rig: OrbitRig,
    start_frame: int,
    qpix: np.ndarray,
    params: TrackerParams,
) -> TrackResult:
    n_frames = len(frames)
    p = len(qpix)
    pyrs = [_kernels.build_pyramid(f.rgb, params.pyramid_levels) for f in frames]
    positions = np.zeros((p, n_frames, 2))
    visible = np.zeros((p, n_frames), dtype=bool)
    # array coords: integer value = pixel center
    start_pos = qpix.astype(np.float64)
    positions[:, start_frame] = start_pos + 0.5
    visible[:, start_frame] = True

    h, w = frames[0].rgb.shape[:2]
    for order in _chain_orders(n_frames, start_frame):
        pos = start_pos.copy()
        prev = start_frame
        for fi in order:
            pos, cost = _kernels.track_step(
                pyrs[prev],
                pyrs[fi],
                pos,
                half=params.patch_half,
                search_coarse=params.search_coarse,
                search_fine=params.search_fine,
            )
            inside = (
                (pos[:, 0] >= 0)
                & (pos[:, 0] <= w - 1)
                & (pos[:, 1] >= 0)
                & (pos[:, 1] <= h - 1)
            )
            positions[:, fi] = pos + 0.5
            visible[:, fi] = inside & (cost < params.cost_threshold)
            prev = fi
    return TrackResult(positions, visible, qpix, start_frame)


def track_points(
    frames: list[Frame],
    rig: OrbitRig,
    start_frame: int,
    query_points: np.ndarray,
    tracker: str = "oracle",
    params: TrackerParams | None = None,
) -> TrackResult:
    """Track query pixels of `start_frame` through every frame of the orbit.

    query_points is an integer (P, 2) array of (x, y) pixels that must lie
    inside the start frame's valid mask; offenders are rejected by index.
    """
    if tracker not in TRACKERS:
        raise DomainError(f"unknown tracker {tracker!r}")
    if len(frames) != len(rig):
        raise DomainError(f"{len(frames)} frames vs rig of {len(rig)}")
    params = params or TrackerParams()
    qpix = np.asarray(query_points, dtype=np.int64).reshape(-1, 2)
    valid = frames[start_frame].valid_mask()
    ok = (
        (qpix[:, 0] >= 0)
        & (qpix[:, 0] < frames[start_frame].width)
        & (qpix[:, 1] >= 0)
        & (qpix[:, 1] < frames[start_frame].height)
    )
    ok &= valid[np.clip(qpix[:, 1], 0, valid.shape[0] - 1),
                np.clip(qpix[:, 0], 0, valid.shape[1] - 1)]
    if not ok.all():
        bad = np.nonzero(~ok)[0]
        raise DomainError(
            f"query points outside the valid mask at indices {bad[:16].tolist()}"
        )
    if tracker == "oracle":
        return _track_oracle(frames, rig, start_frame, qpix, params)
    return _track_photometric(frames, rig, start_frame, qpix, params)


def _landing_valid(frame: Frame, pos: np.ndarray) -> np.ndarray:
    """Whether continuous landing positions fall on valid pixels of `frame`."""
    ix = np.floor(pos[:, 0]).astype(np.int64)
    iy = np.floor(pos[:, 1]).astype(np.int64)
    inside = (ix >= 0) & (ix < frame.width) & (iy >= 0) & (iy < frame.height)
    vm = frame.valid_mask()
    out = np.zeros(len(pos), dtype=bool)
    sel = inside
    out[sel] = vm[iy[sel], ix[sel]]
    return out


def _bilinear_rgb(img: np.ndarray, pos: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    x = np.clip(pos[:, 0] - 0.5, 0.0, w - 1.0)
    y = np.clip(pos[:, 1] - 0.5, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    return (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x1] * fx * (1 - fy)
        + img[y1, x0] * (1 - fx) * fy
        + img[y1, x1] * fx * fy
    )


def backward_infill_mask(
    frames: list[Frame],
    rig: OrbitRig,
    target_view: int,
    anchor_views,
    tracker: str = "oracle",
    params: TrackerParams | None = None,
    mask_threshold: float = MASK_THRESHOLD,
) -> InfillMask:
    """Track every foreground pixel of the target back to the anchors.

    A pixel is KNOWN iff its track lands inside some anchor's valid mask
    with the visibility flag active there; the infill mask is the remaining
    foreground. Colors of KNOWN pixels are pulled from the nearest anchor
    along the orbit and returned as propagated context.
    """
    anchors = tuple(sorted(int(a) for a in anchor_views))
    if len(anchors) == 0:
        raise DomainError("anchor set is empty")
    if target_view in anchors:
        raise DomainError(f"target view {target_view} is in the anchor set")
    target = frames[target_view]
    fg = target.valid_mask(mask_threshold)
    h, w = fg.shape
    mask = np.zeros((h, w), dtype=bool)
    prop_rgb = np.zeros((h, w, 3))
    prop_known = np.zeros((h, w), dtype=bool)
    if not fg.any():
        return InfillMask(mask, target_view, anchors, prop_rgb, prop_known)

    ys, xs = np.nonzero(fg)
    qpix = np.stack([xs, ys], axis=1)
    result = track_points(frames, rig, target_view, qpix, tracker, params)

    p = len(qpix)
    known = np.zeros(p, dtype=bool)
    best_dist = np.full(p, np.iinfo(np.int64).max)
    best_rgb = np.zeros((p, 3))
    for a in anchors:
        pos = result.positions[:, a]
        ok = result.visible[:, a] & _landing_valid(frames[a], pos)
        known |= ok
        dist = rig.cyclic_steps(target_view, a)
        take = ok & (dist < best_dist)
        if take.any():
            best_rgb[take] = _bilinear_rgb(frames[a].rgb, pos[take])
            best_dist[take] = dist
    mask[ys, xs] = ~known
    prop_known[ys[known], xs[known]] = True
    prop_rgb[ys[known], xs[known]] = best_rgb[known]
    return InfillMask(mask, target_view, anchors, prop_rgb, prop_known)


def forward_infill_mask(
    frames: list[Frame],
    rig: OrbitRig,
    target_view: int,
    tracker: str = "oracle",
    params: TrackerParams | None = None,
    mask_threshold: float = MASK_THRESHOLD,
) -> InfillMask:
    """Propagate source pixels onto the target; unhit foreground is the mask.

    A visible landing marks the four pixels under its bilinear support as
    KNOWN. Scatter gaps (not every target pixel gets hit) are what makes
    forward masks grainy under a noisy tracker.
    """
    source_view = rig.source_index
    target = frames[target_view]
    fg = target.valid_mask(mask_threshold)
    h, w = fg.shape
    if target_view == source_view:
        return InfillMask(np.zeros((h, w), dtype=bool), target_view, (source_view,))
    src_fg = frames[source_view].valid_mask(mask_threshold)
    ys, xs = np.nonzero(src_fg)
    qpix = np.stack([xs, ys], axis=1)
    known = np.zeros((h, w), dtype=bool)
    if len(qpix):
        result = track_points(frames, rig, source_view, qpix, tracker, params)
        pos = result.positions[:, target_view]
        vis = result.visible[:, target_view]
        pos = pos[vis] - 0.5  # to array coords for bilinear support
        x0 = np.floor(pos[:, 0]).astype(np.int64)
        y0 = np.floor(pos[:, 1]).astype(np.int64)
        for dy in (0, 1):
            for dx in (0, 1):
                px = x0 + dx
                py = y0 + dy
                ok = (px >= 0) & (px < w) & (py >= 0) & (py < h)
                known[py[ok], px[ok]] = True
    mask = fg & ~known
    return InfillMask(mask, target_view, (source_view,))


def count_components(mask: np.ndarray) -> int:
    """8-connected component count of a binary mask."""
    from scipy import ndimage

    _, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=np.int32))
    return int(n)
