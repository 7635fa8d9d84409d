"""Cameras, orbit rigs, and pinhole projection.

Conventions fixed for the whole package:

* World frame is right-handed with +Y up; subjects sit at the origin.
* Azimuth is measured in degrees about +Y from the source direction, which
  is +Z; azimuth +90 puts a camera on the +X side. Elevation is degrees
  above the XZ plane.
* The camera frame is the usual computer-vision one: +x right, +y down,
  +z forward into the scene.
* Image coordinates are continuous with the origin at the top-left corner,
  x right, y down. Pixel (i, j) covers the unit square whose center is
  (i + 0.5, j + 0.5). The principal point is (width/2, height/2).
* Depth is the distance along the optical axis, not the ray length.
* fov_deg is the vertical field of view; pixels are square.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, DomainError, EmptyRigError, GeometryError

_UP_WORLD = np.array([0.0, 1.0, 0.0])


def camera_rotation(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """World-to-camera rotation for an orbit camera looking at its target.

    Rows are the camera's right / down / forward axes in world coordinates.
    """
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    # Unit vector from look_at towards the camera center.
    out_dir = np.array(
        [math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)]
    )
    forward = -out_dir
    right = np.cross(forward, _UP_WORLD)
    norm = np.linalg.norm(right)
    if norm < 1e-12:
        raise GeometryError("camera forward is parallel to world up (elevation +-90)")
    right /= norm
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


@dataclass(frozen=True)
class Camera:
    """An orbit camera: pose from (azimuth, elevation, radius), pinhole intrinsics."""

    azimuth_deg: float
    elevation_deg: float
    radius: float
    fov_deg: float
    width: int
    height: int
    look_at: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not -180.0 <= self.azimuth_deg <= 180.0:
            raise DomainError(f"azimuth {self.azimuth_deg} outside [-180, 180]")
        if self.radius <= 0:
            raise DomainError(f"radius must be > 0, got {self.radius}")
        if not 0.0 < self.fov_deg < 180.0:
            raise DomainError(f"fov {self.fov_deg} outside (0, 180)")
        if self.width < 1 or self.height < 1:
            raise DomainError(f"image size {self.width}x{self.height} invalid")

    @property
    def rotation(self) -> np.ndarray:
        return camera_rotation(self.azimuth_deg, self.elevation_deg)

    @property
    def center(self) -> np.ndarray:
        rot = self.rotation
        return np.asarray(self.look_at, dtype=np.float64) - self.radius * rot[2]

    @property
    def focal_px(self) -> float:
        return (self.height / 2.0) / math.tan(math.radians(self.fov_deg) / 2.0)

    @property
    def principal(self) -> tuple[float, float]:
        return (self.width / 2.0, self.height / 2.0)

    def to_json_dict(self) -> dict:
        return {
            "azimuth_deg": self.azimuth_deg,
            "elevation_deg": self.elevation_deg,
            "radius": self.radius,
            "fov_deg": self.fov_deg,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Camera":
        return cls(
            azimuth_deg=float(d["azimuth_deg"]),
            elevation_deg=float(d["elevation_deg"]),
            radius=float(d["radius"]),
            fov_deg=float(d["fov_deg"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


def world_to_cam(points: np.ndarray, camera: Camera) -> np.ndarray:
    """Transform world points of shape (..., 3) into the camera frame."""
    pts = np.asarray(points, dtype=np.float64)
    return (pts - camera.center) @ camera.rotation.T


def project_unchecked(points: np.ndarray, camera: Camera):
    """Project without behind-camera checks. Returns (pixels (..., 2), depth)."""
    cam = world_to_cam(points, camera)
    z = cam[..., 2]
    f = camera.focal_px
    cx, cy = camera.principal
    u = cx + f * cam[..., 0] / z
    v = cy + f * cam[..., 1] / z
    return np.stack([u, v], axis=-1), z


def project(points: np.ndarray, camera: Camera):
    """Project world points to continuous pixels and optical-axis depth.

    Raises BehindCameraError if any point is at or behind the camera plane.
    """
    pixels, z = project_unchecked(points, camera)
    if np.any(z <= 0):
        raise BehindCameraError("point at or behind the camera plane")
    return pixels, z


def unproject(pixels: np.ndarray, depth: np.ndarray, camera: Camera) -> np.ndarray:
    """Invert project: continuous pixels + optical-axis depth to world points."""
    px = np.asarray(pixels, dtype=np.float64)
    z = np.asarray(depth, dtype=np.float64)
    if np.any(z <= 0):
        raise DomainError("depth must be > 0")
    u = px[..., 0]
    v = px[..., 1]
    if np.any(u < 0) or np.any(u > camera.width) or np.any(v < 0) or np.any(v > camera.height):
        raise DomainError("pixel outside the image")
    return unproject_unchecked(px, z, camera)


def unproject_unchecked(pixels: np.ndarray, depth: np.ndarray, camera: Camera) -> np.ndarray:
    px = np.asarray(pixels, dtype=np.float64)
    z = np.asarray(depth, dtype=np.float64)
    f = camera.focal_px
    cx, cy = camera.principal
    x = (px[..., 0] - cx) / f * z
    y = (px[..., 1] - cy) / f * z
    cam = np.stack([x, y, z], axis=-1)
    return cam @ camera.rotation + camera.center


@dataclass(frozen=True)
class OrbitRig:
    """An ordered ring of cameras around the subject, sorted by azimuth."""

    cameras: tuple[Camera, ...]
    source_index: int

    def __post_init__(self):
        if len(self.cameras) == 0:
            raise EmptyRigError("a rig needs at least one camera")
        azs = [c.azimuth_deg for c in self.cameras]
        if any(b <= a for a, b in zip(azs, azs[1:])):
            raise GeometryError(f"azimuths not strictly increasing: {azs}")
        if not 0 <= self.source_index < len(self.cameras):
            raise GeometryError(f"source_index {self.source_index} out of range")

    def __len__(self) -> int:
        return len(self.cameras)

    @property
    def azimuths(self) -> np.ndarray:
        return np.array([c.azimuth_deg for c in self.cameras])

    @property
    def source(self) -> Camera:
        return self.cameras[self.source_index]

    def index_of(self, azimuth_deg: float, tol: float = 1e-6) -> int:
        for i, c in enumerate(self.cameras):
            if abs(c.azimuth_deg - azimuth_deg) <= tol:
                return i
        raise GeometryError(f"no camera at azimuth {azimuth_deg}")

    def is_uniform(self, tol: float = 1e-9) -> bool:
        azs = self.azimuths
        if len(azs) < 2:
            return True
        gaps = np.diff(azs)
        return bool(np.all(np.abs(gaps - gaps[0]) <= tol))

    def cyclic_steps(self, i: int, j: int) -> int:
        """Minimal number of neighbor hops between view i and view j on the ring."""
        n = len(self.cameras)
        d = abs(i - j)
        return min(d, n - d)

    def to_json(self) -> str:
        return json.dumps(
            {
                "cameras": [c.to_json_dict() for c in self.cameras],
                "source_index": self.source_index,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "OrbitRig":
        d = json.loads(text)
        cams = tuple(Camera.from_json_dict(c) for c in d["cameras"])
        return cls(cameras=cams, source_index=int(d["source_index"]))


def _wrap_deg(a: float) -> float:
    """Wrap an angle to the canonical [-180, 180) interval."""
    return (a + 180.0) % 360.0 - 180.0


def orbit_cameras(
    n: int,
    radius: float,
    elevation_deg: float = 0.0,
    fov_deg: float = 40.0,
    width: int = 128,
    height: int = 128,
) -> OrbitRig:
    """A uniform orbit of `n` cameras whose azimuths cover [-180, 180).

    The source view always sits at azimuth 0.
    """
    if n < 1:
        raise EmptyRigError(f"n must be >= 1, got {n}")
    azimuths = sorted(_wrap_deg(i * 360.0 / n) for i in range(n))
    cams = tuple(
        Camera(a, elevation_deg, radius, fov_deg, width, height) for a in azimuths
    )
    source = int(np.argmin(np.abs(np.array(azimuths))))
    if abs(azimuths[source]) > 1e-9:
        raise GeometryError("uniform rig does not contain the source azimuth 0")
    return OrbitRig(cameras=cams, source_index=source)


def progressive_orbit_rig(
    step_deg: float = 20.0,
    radius: float = 3.2,
    elevation_deg: float = 0.0,
    fov_deg: float = 40.0,
    width: int = 128,
    height: int = 128,
) -> OrbitRig:
    """The orbit used by the progressive inpainting schedule.

    Azimuths are multiples of step_deg up to (not including) 90, then 90,
    then 90 + multiples of step_deg up to (not including) 180, then 180,
    mirrored to the negative side. step_deg=20 yields
    {0, +-20, +-40, +-60, +-80, +-90, +-110, +-130, +-150, +-170, 180}.
    """
    if step_deg <= 0 or step_deg > 90:
        raise DomainError(f"step_deg must be in (0, 90], got {step_deg}")
    pos = []
    a = step_deg
    while a < 90.0 - 1e-9:
        pos.append(a)
        a += step_deg
    pos.append(90.0)
    a = 90.0 + step_deg
    while a < 180.0 - 1e-9:
        pos.append(a)
        a += step_deg
    pos.append(180.0)
    azimuths = sorted([-a for a in pos if a < 180.0] + [0.0] + pos)
    cams = tuple(
        Camera(a, elevation_deg, radius, fov_deg, width, height) for a in azimuths
    )
    return OrbitRig(cameras=cams, source_index=azimuths.index(0.0))
