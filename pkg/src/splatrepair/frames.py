"""Per-view image data and its on-disk formats.

A Frame bundles what the pipeline knows about one viewpoint: an RGB image
in [0, 1], an alpha (coverage) channel, and optionally a per-pixel depth
map measured along the optical axis. Background pixels carry depth NaN.

File formats are deliberately boring: 8-bit PNG for color, binary PGM
(P5, 0/255) for masks, and .npy for depth.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from PIL import Image

from .errors import DataError

MASK_THRESHOLD = 0.5


@dataclass(frozen=True)
class Frame:
    """One viewpoint's image data: RGB + alpha, optional axis-aligned depth."""

    rgb: np.ndarray            # (H, W, 3) float in [0, 1]
    alpha: np.ndarray          # (H, W) float in [0, 1]
    depth: np.ndarray | None = None   # (H, W) float, NaN on background

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.float64)
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise DataError(f"rgb must be (H, W, 3), got {rgb.shape}")
        if alpha.shape != rgb.shape[:2]:
            raise DataError(f"alpha shape {alpha.shape} != image {rgb.shape[:2]}")
        object.__setattr__(self, "rgb", rgb)
        object.__setattr__(self, "alpha", alpha)
        if self.depth is not None:
            depth = np.asarray(self.depth, dtype=np.float64)
            if depth.shape != alpha.shape:
                raise DataError(f"depth shape {depth.shape} != image {alpha.shape}")
            object.__setattr__(self, "depth", depth)

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    def valid_mask(self, threshold: float = MASK_THRESHOLD) -> np.ndarray:
        """Foreground mask: pixels whose accumulated alpha exceeds `threshold`."""
        return self.alpha > threshold

    def with_rgb(self, rgb: np.ndarray) -> "Frame":
        return replace(self, rgb=np.asarray(rgb, dtype=np.float64))

    def flip_horizontal(self) -> "Frame":
        depth = None if self.depth is None else np.ascontiguousarray(self.depth[:, ::-1])
        return Frame(
            rgb=np.ascontiguousarray(self.rgb[:, ::-1]),
            alpha=np.ascontiguousarray(self.alpha[:, ::-1]),
            depth=depth,
        )

    def copy(self) -> "Frame":
        depth = None if self.depth is None else self.depth.copy()
        return Frame(rgb=self.rgb.copy(), alpha=self.alpha.copy(), depth=depth)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def write_png(path, rgb: np.ndarray) -> None:
    """Write an RGB float image in [0, 1] as 8-bit PNG."""
    Image.fromarray(to_uint8(rgb), mode="RGB").save(str(path), format="PNG")


def read_png(path) -> np.ndarray:
    """Read an 8-bit PNG back to float RGB in [0, 1]."""
    with Image.open(str(path)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_pgm(path, mask: np.ndarray) -> None:
    """Write a binary mask as 8-bit PGM (P5), foreground = 255."""
    mask = np.asarray(mask)
    if mask.dtype != bool:
        mask = mask > 0
    h, w = mask.shape
    data = np.where(mask, 255, 0).astype(np.uint8)
    with open(str(path), "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit P5 PGM written by write_pgm; returns a bool mask."""
    with open(str(path), "rb") as f:
        raw = f.read()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise DataError(f"not a P5 PGM file: {path}")
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    if maxval != 255:
        raise DataError(f"unsupported PGM maxval {maxval}")
    data = np.frombuffer(parts[3][: w * h], dtype=np.uint8).reshape(h, w)
    return data >= 128
