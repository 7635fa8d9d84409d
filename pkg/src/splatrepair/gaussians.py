"""The 14-parameter 3D Gaussian primitive, a CPU rasterizer, and resplat.

A splat is 14 scalars: center (3), per-axis scale (3), rotation quaternion
in w,x,y,z order (4), opacity (1), RGB color (3). GaussianSet stores them
as one float32 (N, 14) array, which is also the ASCII PLY layout:

    property float x, y, z
    property float scale_0, scale_1, scale_2
    property float rot_0, rot_1, rot_2, rot_3      (w, x, y, z)
    property float opacity
    property float red, green, blue

Rendering follows the common splatting recipe: project each 3D covariance
through the local affine (Jacobian) approximation of the perspective map,
sort by depth, and alpha-composite front to back with per-splat alpha
clamped at 0.99. Output depth is the alpha-weighted expected depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DataError, DomainError
from .frames import MASK_THRESHOLD, Frame
from .geometry import Camera, unproject_unchecked, world_to_cam

COL_CENTER = slice(0, 3)
COL_SCALE = slice(3, 6)
COL_QUAT = slice(6, 10)
COL_OPACITY = 10
COL_COLOR = slice(11, 14)

RESPLAT_SCALE_K = 0.7


@dataclass(frozen=True)
class Gaussian3D:
    """A single splat; mostly a convenience view over one GaussianSet row."""

    center: tuple[float, float, float]
    scale: tuple[float, float, float]
    rotation: tuple[float, float, float, float]  # w, x, y, z
    opacity: float
    color: tuple[float, float, float]

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64)
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise DomainError(f"quaternion norm {np.linalg.norm(q)} != 1")
        if any(s <= 0 for s in self.scale):
            raise DomainError(f"scales must be > 0, got {self.scale}")
        if not 0.0 <= self.opacity <= 1.0:
            raise DomainError(f"opacity {self.opacity} outside [0, 1]")
        if any(not 0.0 <= c <= 1.0 for c in self.color):
            raise DomainError(f"color {self.color} outside [0, 1]")

    def to_row(self) -> np.ndarray:
        return np.array(
            [*self.center, *self.scale, *self.rotation, self.opacity, *self.color],
            dtype=np.float32,
        )


class GaussianSet:
    """An asset: N splats in a float32 (N, 14) array plus optional provenance.

    Provenance, when present, is an int32 (N, 3) array of
    (view index, pixel x, pixel y) recording which resplatted pixel
    produced each splat.
    """

    def __init__(self, data: np.ndarray, provenance: np.ndarray | None = None):
        data = np.ascontiguousarray(data, dtype=np.float32)
        if data.ndim != 2 or data.shape[1] != 14:
            raise DomainError(f"data must be (N, 14), got {data.shape}")
        self.data = data
        if provenance is not None:
            provenance = np.ascontiguousarray(provenance, dtype=np.int32)
            if provenance.shape != (len(data), 3):
                raise DomainError(
                    f"provenance shape {provenance.shape} != ({len(data)}, 3)"
                )
        self.provenance = provenance
        self._validate()

    def _validate(self):
        if len(self.data) == 0:
            return
        qn = np.linalg.norm(self.data[:, COL_QUAT], axis=1)
        if np.any(np.abs(qn - 1.0) > 1e-5):
            raise DomainError("quaternions must be unit length")
        if np.any(self.data[:, COL_SCALE] <= 0):
            raise DomainError("scales must be > 0")
        op = self.data[:, COL_OPACITY]
        if np.any(op < 0) or np.any(op > 1):
            raise DomainError("opacity outside [0, 1]")
        col = self.data[:, COL_COLOR]
        if np.any(col < 0) or np.any(col > 1):
            raise DomainError("color outside [0, 1]")

    @classmethod
    def empty(cls) -> "GaussianSet":
        return cls(np.zeros((0, 14), dtype=np.float32))

    @classmethod
    def from_arrays(
        cls,
        centers,
        scales,
        rotations,
        opacities,
        colors,
        provenance=None,
    ) -> "GaussianSet":
        centers = np.atleast_2d(np.asarray(centers, dtype=np.float32))
        n = len(centers)
        data = np.empty((n, 14), dtype=np.float32)
        data[:, COL_CENTER] = centers
        data[:, COL_SCALE] = np.asarray(scales, dtype=np.float32).reshape(n, 3)
        data[:, COL_QUAT] = np.asarray(rotations, dtype=np.float32).reshape(n, 4)
        data[:, COL_OPACITY] = np.asarray(opacities, dtype=np.float32).reshape(n)
        data[:, COL_COLOR] = np.asarray(colors, dtype=np.float32).reshape(n, 3)
        return cls(data, provenance)

    def __len__(self) -> int:
        return len(self.data)

    def gaussian(self, i: int) -> Gaussian3D:
        row = self.data[i].astype(np.float64)
        return Gaussian3D(
            center=tuple(row[COL_CENTER]),
            scale=tuple(row[COL_SCALE]),
            rotation=tuple(row[COL_QUAT]),
            opacity=float(row[COL_OPACITY]),
            color=tuple(row[COL_COLOR]),
        )

    @property
    def centers(self) -> np.ndarray:
        return self.data[:, COL_CENTER]

    @property
    def colors(self) -> np.ndarray:
        return self.data[:, COL_COLOR]

    def copy(self) -> "GaussianSet":
        prov = None if self.provenance is None else self.provenance.copy()
        return GaussianSet(self.data.copy(), prov)


def merge(a: GaussianSet, b: GaussianSet) -> GaussianSet:
    """Concatenate two sets; provenance is kept when both sides carry it."""
    data = np.concatenate([a.data, b.data], axis=0)
    prov = None
    if a.provenance is not None and b.provenance is not None:
        prov = np.concatenate([a.provenance, b.provenance], axis=0)
    elif a.provenance is not None and len(b) == 0:
        prov = a.provenance.copy()
    elif b.provenance is not None and len(a) == 0:
        prov = b.provenance.copy()
    return GaussianSet(data, prov)


def quats_to_rotmats(q: np.ndarray) -> np.ndarray:
    """Batch of unit quaternions (w, x, y, z) to rotation matrices (N, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    out = np.empty((len(q), 3, 3))
    out[:, 0, 0] = 1 - 2 * (y * y + z * z)
    out[:, 0, 1] = 2 * (x * y - w * z)
    out[:, 0, 2] = 2 * (x * z + w * y)
    out[:, 1, 0] = 2 * (x * y + w * z)
    out[:, 1, 1] = 1 - 2 * (x * x + z * z)
    out[:, 1, 2] = 2 * (y * z - w * x)
    out[:, 2, 0] = 2 * (x * z - w * y)
    out[:, 2, 1] = 2 * (y * z + w * x)
    out[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def render(gset: GaussianSet, camera: Camera) -> Frame:
    """Rasterize a GaussianSet. Background is black with alpha 0, depth NaN."""
    h, w = camera.height, camera.width
    if len(gset) == 0:
        return Frame(
            rgb=np.zeros((h, w, 3)),
            alpha=np.zeros((h, w)),
            depth=np.full((h, w), np.nan),
        )
    data = gset.data.astype(np.float64)
    cam_pts = world_to_cam(data[:, COL_CENTER], camera)
    z = cam_pts[:, 2]
    alive = z > 1e-9
    alive &= data[:, COL_OPACITY] >= _kernels.MIN_SPLAT_ALPHA

    f = camera.focal_px
    cx, cy = camera.principal
    zs = np.where(alive, z, 1.0)
    mx = cx + f * cam_pts[:, 0] / zs
    my = cy + f * cam_pts[:, 1] / zs

    # 3D covariance in camera frame, then the 2x2 image-plane covariance via
    # the Jacobian of the perspective map.
    rot = quats_to_rotmats(data[:, COL_QUAT])
    s = data[:, COL_SCALE]
    m = rot * s[:, None, :]
    cov3 = m @ np.swapaxes(m, 1, 2)
    rc = camera.rotation
    cov_cam = rc[None] @ cov3 @ rc.T[None]

    jx = f / zs
    tx, ty = cam_pts[:, 0], cam_pts[:, 1]
    j02 = -f * tx / (zs * zs)
    j12 = -f * ty / (zs * zs)
    # J rows: [jx, 0, j02], [0, jx, j12]
    a = (
        jx * jx * cov_cam[:, 0, 0]
        + 2 * jx * j02 * cov_cam[:, 0, 2]
        + j02 * j02 * cov_cam[:, 2, 2]
    )
    b = (
        jx * jx * cov_cam[:, 0, 1]
        + jx * j12 * cov_cam[:, 0, 2]
        + j02 * jx * cov_cam[:, 1, 2]
        + j02 * j12 * cov_cam[:, 2, 2]
    )
    c = (
        jx * jx * cov_cam[:, 1, 1]
        + 2 * jx * j12 * cov_cam[:, 1, 2]
        + j12 * j12 * cov_cam[:, 2, 2]
    )
    # Screen-space low-pass (the usual 0.3 px dilation) keeps sub-pixel
    # splats visible and near-degenerate covariances invertible.
    a = a + _kernels.LOWPASS_PX
    c = c + _kernels.LOWPASS_PX
    det = a * c - b * b
    alive &= det > 1e-18
    det = np.where(det > 1e-18, det, 1.0)
    inv_a = c / det
    inv_b = -b / det
    inv_c = a / det

    # 3 sigma of the major axis bounds the splat's pixel footprint.
    mid = 0.5 * (a + c)
    disc = np.sqrt(np.maximum(mid * mid - det, 0.0))
    radii = 3.0 * np.sqrt(np.maximum(mid + disc, 1e-12))
    alive &= (mx + radii > 0) & (mx - radii < w) & (my + radii > 0) & (my - radii < h)

    idx = np.nonzero(alive)[0]
    if len(idx) == 0:
        return Frame(
            rgb=np.zeros((h, w, 3)),
            alpha=np.zeros((h, w)),
            depth=np.full((h, w), np.nan),
        )
    order = idx[np.argsort(z[idx], kind="stable")]  # ties keep insertion order
    rgb, acc, dsum = _kernels.rasterize(
        np.stack([mx[order], my[order]], axis=1),
        np.stack([inv_a[order], inv_b[order], inv_c[order]], axis=1),
        z[order],
        data[order][:, COL_COLOR],
        data[order][:, COL_OPACITY],
        radii[order],
        h,
        w,
    )
    depth = np.where(acc > 1e-12, dsum / np.where(acc > 1e-12, acc, 1.0), np.nan)
    return Frame(rgb=rgb, alpha=acc, depth=depth)


def resplat(
    frames: list[Frame],
    cameras: list[Camera],
    stride: int = 2,
    scale_k: float = RESPLAT_SCALE_K,
    mask_threshold: float = MASK_THRESHOLD,
) -> GaussianSet:
    """Lift foreground pixels back to one isotropic Gaussian each.

    Pixels are sampled on a stride grid (offset stride//2); each sampled
    foreground pixel yields a splat at unproject(pixel center, depth) with
    the pixel's color and alpha, identity rotation, and isotropic scale
    depth * (2 tan(fov/2) / height) * stride * scale_k.
    """
    if len(frames) != len(cameras):
        raise DomainError(f"{len(frames)} frames vs {len(cameras)} cameras")
    if stride < 1:
        raise DomainError(f"stride must be >= 1, got {stride}")
    parts_data = []
    parts_prov = []
    off = stride // 2
    for vi, (frame, cam) in enumerate(zip(frames, cameras)):
        sub_alpha = frame.alpha[off::stride, off::stride]
        fg = sub_alpha > mask_threshold
        if not fg.any():
            continue
        if frame.depth is None:
            raise DataError(f"view {vi}: foreground pixels but no depth channel")
        ys, xs = np.nonzero(fg)
        py = ys * stride + off
        px = xs * stride + off
        d = frame.depth[py, px]
        bad = ~np.isfinite(d)
        if bad.any():
            j = int(np.argmax(bad))
            raise DataError(
                f"view {vi}: missing depth at foreground pixel ({px[j]}, {py[j]})"
            )
        centers = unproject_unchecked(
            np.stack([px + 0.5, py + 0.5], axis=1), d, cam
        )
        footprint = 2.0 * math.tan(math.radians(cam.fov_deg) / 2.0) / cam.height
        scales = (d * footprint * stride * scale_k)[:, None].repeat(3, axis=1)
        n = len(centers)
        quats = np.zeros((n, 4))
        quats[:, 0] = 1.0
        data = np.empty((n, 14), dtype=np.float32)
        data[:, COL_CENTER] = centers
        data[:, COL_SCALE] = scales
        data[:, COL_QUAT] = quats
        data[:, COL_OPACITY] = np.clip(frame.alpha[py, px], 0.0, 1.0)
        data[:, COL_COLOR] = np.clip(frame.rgb[py, px], 0.0, 1.0)
        prov = np.stack([np.full(n, vi), px, py], axis=1).astype(np.int32)
        parts_data.append(data)
        parts_prov.append(prov)
    if not parts_data:
        return GaussianSet.empty()
    return GaussianSet(
        np.concatenate(parts_data, axis=0), np.concatenate(parts_prov, axis=0)
    )


_PLY_PROPS = (
    "x", "y", "z",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "opacity",
    "red", "green", "blue",
)


def _fmt_f32(v: np.float32) -> str:
    return np.format_float_positional(v, unique=True, trim="0")


def write_ply(path, gset: GaussianSet) -> None:
    """Write an ASCII PLY with exactly the 14 float properties per vertex."""
    lines = [
        "ply",
        "format ascii 1.0",
        "comment splatrepair gaussian asset: center, scale, quat wxyz, opacity, rgb",
        f"element vertex {len(gset)}",
    ]
    lines += [f"property float {name}" for name in _PLY_PROPS]
    lines.append("end_header")
    body = "\n".join(
        " ".join(_fmt_f32(v) for v in row) for row in gset.data
    )
    text = "\n".join(lines)
    if len(gset):
        text += "\n" + body
    with open(str(path), "w", encoding="ascii") as f:
        f.write(text + "\n")


def read_ply(path) -> GaussianSet:
    with open(str(path), "r", encoding="ascii") as f:
        header = []
        for line in f:
            header.append(line.strip())
            if line.strip() == "end_header":
                break
        else:
            raise DataError(f"no end_header in {path}")
        n = 0
        props = []
        for line in header:
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
            elif line.startswith("property float"):
                props.append(line.split()[-1])
        if tuple(props) != _PLY_PROPS:
            raise DataError(f"unexpected PLY properties {props}")
        data = np.loadtxt(f, dtype=np.float32, max_rows=n) if n else np.zeros((0, 14))
    data = np.asarray(data, dtype=np.float32).reshape(n, 14)
    return GaussianSet(data)
