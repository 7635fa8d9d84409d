"""Synthetic subjects and controlled corruptions.

Every pipeline stage is scored against a known answer, so this module
generates textured Gaussian clouds on simple surfaces (sphere, capsule,
box composite) and applies color-only corruptions to an azimuthal band of
the surface, emulating the wrong-colors-on-occluded-regions failure the
pipeline repairs.

All randomness goes through numpy's PCG64 so subjects are bit-reproducible
across platforms for a given seed. Textures carry a monotone brightness
ramp in azimuth, which guarantees the front and back views differ for any
palette.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError
from .frames import Frame
from .gaussians import COL_COLOR, GaussianSet
from .geometry import OrbitRig

SHAPES = ("sphere", "capsule", "box-composite")
TEXTURES = ("checker", "stripes", "noise-patches")
CORRUPTION_MODES = ("hue_shift", "flat_tint", "blur")

DEFAULT_PALETTE = (
    (0.88, 0.16, 0.12),
    (0.95, 0.78, 0.12),
    (0.13, 0.32, 0.80),
)
DEFAULT_TINT = (0.42, 0.50, 0.78)  # the classic wrong bluish tone


@dataclass(frozen=True)
class SubjectSpec:
    shape: str = "sphere"
    texture: str = "checker"
    cell_deg: float = 40.0
    palette: tuple = DEFAULT_PALETTE
    gaussian_density: float = 6000.0  # splats per unit surface area
    seed: int = 0
    noise_sites: int = 60
    asym_depth: float = 0.25          # azimuth brightness ramp amplitude
    speckle: float = 0.25             # amplitude of coherent micro-detail
    speckle_deg: float = 6.0          # angular cell size of the micro-detail
    # opacity/scale keep the shell watertight: interior rays must exhaust
    # transmittance inside the front surface so occluded regions never leak
    opacity: float = 0.995
    scale_factor: float = 1.5         # splat sigma as a fraction of sample spacing

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise DomainError(f"unknown shape {self.shape!r}")
        if self.texture not in TEXTURES:
            raise DomainError(f"unknown texture {self.texture!r}")
        if self.gaussian_density <= 0:
            raise DomainError("gaussian_density must be > 0")
        if self.cell_deg <= 0:
            raise DomainError("cell_deg must be > 0")
        for color in self.palette:
            if any(not 0.0 <= v <= 1.0 for v in color):
                raise DomainError(f"palette color {color} outside [0, 1]^3")
        if not 0.0 <= self.asym_depth < 1.0:
            raise DomainError("asym_depth must be in [0, 1)")


@dataclass(frozen=True)
class CorruptionSpec:
    region_lo_deg: float = 90.0
    region_hi_deg: float = 270.0
    mode: str = "flat_tint"
    strength: float = 0.85
    seed: int = 0
    tint: tuple = DEFAULT_TINT
    blur_neighbors: int = 16

    def __post_init__(self):
        if not 0.0 <= self.region_lo_deg < self.region_hi_deg <= 360.0:
            raise DomainError(
                f"region [{self.region_lo_deg}, {self.region_hi_deg}] must satisfy "
                "0 <= lo < hi <= 360"
            )
        if self.mode not in CORRUPTION_MODES:
            raise DomainError(f"unknown corruption mode {self.mode!r}")
        if not 0.0 <= self.strength <= 1.0:
            raise DomainError("strength must be in [0, 1]")


# --- surface sampling -------------------------------------------------------


def _sample_sphere(count: int, rng: np.random.Generator):
    v = rng.standard_normal((count, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v, v.copy()


_CAPSULE_R = 0.62
_CAPSULE_H = 0.45  # cylinder half-length along Y


def _sample_capsule(count: int, rng: np.random.Generator):
    area_cyl = 2 * math.pi * _CAPSULE_R * 2 * _CAPSULE_H
    area_caps = 4 * math.pi * _CAPSULE_R**2
    n_cyl = int(round(count * area_cyl / (area_cyl + area_caps)))
    n_caps = count - n_cyl
    phi = rng.uniform(0, 2 * math.pi, n_cyl)
    y = rng.uniform(-_CAPSULE_H, _CAPSULE_H, n_cyl)
    cyl = np.stack(
        [_CAPSULE_R * np.sin(phi), y, _CAPSULE_R * np.cos(phi)], axis=1
    )
    cyl_n = np.stack([np.sin(phi), np.zeros(n_cyl), np.cos(phi)], axis=1)
    sph = rng.standard_normal((n_caps, 3))
    sph /= np.linalg.norm(sph, axis=1, keepdims=True)
    caps = sph * _CAPSULE_R
    caps[:, 1] += np.where(sph[:, 1] >= 0, _CAPSULE_H, -_CAPSULE_H)
    pts = np.concatenate([cyl, caps], axis=0)
    normals = np.concatenate([cyl_n, sph], axis=0)
    return pts, normals


_BOXES = (
    # (half extents, center)
    ((0.45, 0.55, 0.45), (0.0, 0.0, 0.0)),
    ((0.28, 0.28, 0.28), (0.45, 0.30, 0.0)),
)


def _inside_box(pts, half, center, slack=1e-6):
    rel = np.abs(pts - np.asarray(center))
    h = np.asarray(half)
    return np.all(rel < h - slack, axis=1)


def _sample_box_composite(count: int, rng: np.random.Generator):
    areas = []
    for half, _ in _BOXES:
        hx, hy, hz = half
        areas.append(8 * (hx * hy + hy * hz + hx * hz))
    total = sum(areas)
    pts_all, nrm_all = [], []
    for bi, (half, center) in enumerate(_BOXES):
        n_box = int(round(count * areas[bi] / total))
        hx, hy, hz = half
        face_areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
        face_areas = face_areas / face_areas.sum()
        faces = rng.choice(6, size=n_box, p=face_areas)
        u = rng.uniform(-1, 1, n_box)
        v = rng.uniform(-1, 1, n_box)
        pts = np.empty((n_box, 3))
        nrm = np.zeros((n_box, 3))
        for f in range(6):
            m = faces == f
            axis = f // 2
            sign = 1.0 if f % 2 == 0 else -1.0
            other = [a for a in range(3) if a != axis]
            pts[m, axis] = sign * half[axis]
            pts[m, other[0]] = u[m] * half[other[0]]
            pts[m, other[1]] = v[m] * half[other[1]]
            nrm[m, axis] = sign
        pts += np.asarray(center)
        pts_all.append(pts)
        nrm_all.append(nrm)
    pts = np.concatenate(pts_all, axis=0)
    nrm = np.concatenate(nrm_all, axis=0)
    # union surface: drop samples buried inside the other box
    keep = np.ones(len(pts), dtype=bool)
    for bi, (half, center) in enumerate(_BOXES):
        inside = _inside_box(pts, half, center)
        # samples belonging to box bi are on its surface, never inside it
        start = 0 if bi == 1 else len(pts_all[0])
        owner = np.zeros(len(pts), dtype=bool)
        if bi == 1:
            owner[: len(pts_all[0])] = True
        else:
            owner[len(pts_all[0]):] = True
        keep &= ~(inside & owner)
    return pts[keep], nrm[keep]


def surface_area(shape: str) -> float:
    if shape == "sphere":
        return 4 * math.pi
    if shape == "capsule":
        return (
            2 * math.pi * _CAPSULE_R * 2 * _CAPSULE_H + 4 * math.pi * _CAPSULE_R**2
        )
    area = 0.0
    for (hx, hy, hz), _ in _BOXES:
        area += 8 * (hx * hy + hy * hz + hx * hz)
    return area


# --- textures ---------------------------------------------------------------


def position_azimuth_deg(points: np.ndarray) -> np.ndarray:
    """Azimuth of each point's direction from the origin, in (-180, 180]."""
    az = np.degrees(np.arctan2(points[..., 0], points[..., 2]))
    return np.where(az <= -180.0, az + 360.0, az)


def _texture_colors(spec: SubjectSpec, points: np.ndarray, rng) -> np.ndarray:
    az = position_azimuth_deg(points)
    r = np.linalg.norm(points, axis=1)
    el = np.degrees(np.arcsin(np.clip(points[:, 1] / np.maximum(r, 1e-12), -1, 1)))
    palette = np.asarray(spec.palette, dtype=np.float64)
    k = len(palette)
    if spec.texture == "checker":
        idx = (
            np.floor((az + 180.0) / spec.cell_deg)
            + np.floor((el + 90.0) / spec.cell_deg)
        ).astype(np.int64) % k
    elif spec.texture == "stripes":
        idx = np.floor((az + 180.0) / spec.cell_deg).astype(np.int64) % k
    else:  # noise-patches: nearest of seeded random sites on the direction sphere
        sites = rng.standard_normal((spec.noise_sites, 3))
        sites /= np.linalg.norm(sites, axis=1, keepdims=True)
        site_colors = rng.integers(0, k, spec.noise_sites)
        dirs = points / np.maximum(np.linalg.norm(points, axis=1, keepdims=True), 1e-12)
        nearest = np.argmax(dirs @ sites.T, axis=1)
        idx = site_colors[nearest]
    colors = palette[idx]
    # monotone azimuth ramp: breaks every mirror/rotation symmetry
    ramp = 1.0 - spec.asym_depth * (az + 180.0) / 360.0
    colors = colors * ramp[:, None]
    if spec.speckle > 0:
        # Coherent micro-detail: a seeded brightness value per small angular
        # cell. Splat-level noise would average out under rendering blur;
        # cell-level structure survives it and gives patch trackers unique,
        # localizable texture everywhere.
        n_az = int(np.ceil(360.0 / spec.speckle_deg))
        n_el = int(np.ceil(180.0 / spec.speckle_deg)) + 1
        detail_rng = np.random.Generator(np.random.PCG64(spec.seed + 0x5EED))
        table = detail_rng.random((n_az, n_el))
        ai = np.clip(((az + 180.0) / spec.speckle_deg).astype(np.int64), 0, n_az - 1)
        ei = np.clip(((el + 90.0) / spec.speckle_deg).astype(np.int64), 0, n_el - 1)
        jitter = 1.0 + spec.speckle * (2.0 * table[ai, ei] - 1.0)
        colors = colors * jitter[:, None]
    return np.clip(colors, 0.0, 1.0)


def make_subject(spec: SubjectSpec) -> GaussianSet:
    """A deterministic textured Gaussian cloud on the requested surface."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    count = int(round(surface_area(spec.shape) * spec.gaussian_density))
    if spec.shape == "sphere":
        pts, _ = _sample_sphere(count, rng)
    elif spec.shape == "capsule":
        pts, _ = _sample_capsule(count, rng)
    else:
        pts, _ = _sample_box_composite(count, rng)
    colors = _texture_colors(spec, pts, rng)
    spacing = math.sqrt(surface_area(spec.shape) / max(len(pts), 1))
    sigma = spacing * spec.scale_factor
    n = len(pts)
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    return GaussianSet.from_arrays(
        pts,
        np.full((n, 3), sigma),
        quats,
        np.full(n, spec.opacity),
        colors,
    )


# --- corruption -------------------------------------------------------------


def _rgb_to_hsv(rgb: np.ndarray):
    mx = rgb.max(axis=1)
    mn = rgb.min(axis=1)
    diff = mx - mn
    h = np.zeros(len(rgb))
    r, g, b = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    nz = diff > 1e-12
    rm = nz & (mx == r)
    gm = nz & (mx == g) & ~rm
    bm = nz & ~rm & ~gm
    h[rm] = np.mod((g[rm] - b[rm]) / diff[rm], 6.0)
    h[gm] = (b[gm] - r[gm]) / diff[gm] + 2.0
    h[bm] = (r[bm] - g[bm]) / diff[bm] + 4.0
    h /= 6.0
    s = np.where(mx > 1e-12, diff / np.maximum(mx, 1e-12), 0.0)
    return h, s, mx


def _hsv_to_rgb(h, s, v):
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - f * s)
    t = v * (1 - (1 - f) * s)
    out = np.empty((len(h), 3))
    for idx, (a, b, c) in enumerate(
        [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    ):
        m = i == idx
        out[m, 0] = a[m]
        out[m, 1] = b[m]
        out[m, 2] = c[m]
    return out


def corrupt_asset(gt: GaussianSet, spec: CorruptionSpec) -> GaussianSet:
    """Modify colors of splats whose surface azimuth falls in the region.

    Geometry (centers, scales, rotations, opacities) is bit-untouched; the
    new color is a strength-lerp from the original toward the mode's target,
    so strength 0 returns a bit-equal asset.
    """
    out = gt.copy()
    if len(out) == 0:
        return out
    az = position_azimuth_deg(out.data[:, 0:3].astype(np.float64))
    az_mod = np.mod(az, 360.0)
    region = (az_mod >= spec.region_lo_deg) & (az_mod <= spec.region_hi_deg)
    if not region.any():
        return out
    orig = out.data[region, COL_COLOR].astype(np.float64)
    if spec.mode == "hue_shift":
        h, s, v = _rgb_to_hsv(orig)
        target = _hsv_to_rgb(h + 0.5, s, v)
    elif spec.mode == "flat_tint":
        target = np.broadcast_to(np.asarray(spec.tint, dtype=np.float64), orig.shape)
    else:  # blur: pull toward the local neighborhood mean color
        pts = out.data[region, 0:3].astype(np.float64)
        k = min(spec.blur_neighbors, len(pts))
        tree = cKDTree(pts)
        _, nbr = tree.query(pts, k=k)
        target = orig[nbr].mean(axis=1)
    new = orig + spec.strength * (target - orig)
    out.data[region, COL_COLOR] = np.clip(new, 0.0, 1.0).astype(np.float32)
    return out


def ground_truth_views(gt: GaussianSet, rig: OrbitRig) -> list[Frame]:
    """Deterministic renders of the asset from every rig camera."""
    from .gaussians import render

    return [render(gt, cam) for cam in rig.cameras]
