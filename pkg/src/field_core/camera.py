"""
Pinhole cameras, rays and ray/box intersection.

Image coordinates: pixel (row i, column j) sits at (u=j, v=i). The camera
looks down its +z axis with x to the right and y down.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple

import numpy as np

from src.utils.errors import ConfigError, InvalidArgumentError

ORTHONORMAL_TOL = 1e-6
CAMERA_LINE_NUMBERS = 23


@dataclass
class Ray:
    """A single parametric ray origin + t * direction, t in [t_near, t_far]"""

    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3)

    def validate(self) -> None:
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise InvalidArgumentError("ray direction must be a unit vector")
        if not 0.0 <= self.t_near < self.t_far:
            raise InvalidArgumentError(f"invalid ray bounds [{self.t_near}, {self.t_far}]")

    def at(self, t) -> np.ndarray:
        return self.origin + np.multiply.outer(np.asarray(t, dtype=np.float64), self.direction)


@dataclass
class CameraModel:
    """Pinhole camera; `rotation`/`translation` map camera to world coordinates"""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width = int(self.width)
        self.height = int(self.height)

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidArgumentError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise InvalidArgumentError("camera resolution must be at least 1x1")
        gram = self.rotation.T @ self.rotation
        if np.abs(gram - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise InvalidArgumentError("camera rotation is not orthonormal")
        if abs(np.linalg.det(self.rotation) - 1.0) > ORTHONORMAL_TOL:
            raise InvalidArgumentError("camera rotation must have det = +1")

    @property
    def center(self) -> np.ndarray:
        return self.translation

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    @classmethod
    def look_at(cls, eye, target, width: int, height: int, fov_y_deg: float = 40.0,
                up=(0.0, 0.0, 1.0)) -> "CameraModel":
        """Camera at `eye` looking at `target`; square pixels, centred principal point"""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        up = np.asarray(up, dtype=np.float64)
        if abs(np.dot(forward, up / np.linalg.norm(up))) > 0.999:
            up = np.array([0.0, 1.0, 0.0]) if abs(forward[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        right = np.cross(forward, up)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rotation = np.stack([right, down, forward], axis=1)

        focal = 0.5 * height / np.tan(np.radians(fov_y_deg) / 2.0)
        return cls(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0,
                   width, height, rotation, eye)

    def pixel_directions(self, rows: np.ndarray = None, cols: np.ndarray = None) -> np.ndarray:
        """Unit world-space directions through the given pixels (all pixels, row-major, by default)"""
        if rows is None or cols is None:
            rows, cols = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
            rows, cols = rows.ravel(), cols.ravel()
        rows = np.asarray(rows, dtype=np.float64)
        cols = np.asarray(cols, dtype=np.float64)
        local = np.stack([(cols - self.cx) / self.fx,
                          (rows - self.cy) / self.fy,
                          np.ones_like(cols)], axis=-1)
        dirs = local @ self.rotation.T
        return dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)

    def pixel_rays(self, rows: np.ndarray = None, cols: np.ndarray = None):
        dirs = self.pixel_directions(rows, cols)
        origins = np.broadcast_to(self.translation, dirs.shape).copy()
        return origins, dirs

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    def project(self, points: np.ndarray):
        """Return continuous pixel coordinates (u, v) and camera-space z"""
        local = self.world_to_camera(points)
        z = local[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * local[..., 0] / z + self.cx
            v = self.fy * local[..., 1] / z + self.cy
        return u, v, z

    def to_line(self) -> str:
        K = [self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0]
        c2w = np.hstack([self.rotation, self.translation[:, None]]).ravel()
        numbers = [self.width, self.height] + K + list(c2w)
        return " ".join(repr(float(x)) if i >= 2 else str(int(x)) for i, x in enumerate(numbers))

    @classmethod
    def from_numbers(cls, width: int, height: int, numbers) -> "CameraModel":
        """Build from 9 intrinsics (K row-major) followed by a 3x4 camera-to-world matrix"""
        numbers = np.asarray(numbers, dtype=np.float64)
        if numbers.size != 21:
            raise ConfigError(f"expected 21 camera numbers, got {numbers.size}")
        K = numbers[:9].reshape(3, 3)
        if abs(K[0, 1]) > 1e-12:
            raise ConfigError("camera skew is not supported")
        c2w = numbers[9:].reshape(3, 4)
        cam = cls(K[0, 0], K[1, 1], K[0, 2], K[1, 2], width, height, c2w[:, :3], c2w[:, 3])
        try:
            cam.validate()
        except InvalidArgumentError as e:
            raise ConfigError(f"invalid camera: {e}")
        return cam

    @classmethod
    def from_line(cls, line: str) -> "CameraModel":
        try:
            values = [float(x) for x in line.split()]
        except ValueError:
            raise ConfigError(f"non-numeric camera line: {line[:60]!r}")
        if len(values) != CAMERA_LINE_NUMBERS:
            raise ConfigError(f"camera line needs {CAMERA_LINE_NUMBERS} numbers, got {len(values)}")
        return cls.from_numbers(int(values[0]), int(values[1]), values[2:])


def load_camera(path) -> CameraModel:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ConfigError(f"camera file {path} is empty")
    return CameraModel.from_line(" ".join(lines))


def save_camera(path, camera: CameraModel) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(camera.to_line() + "\n")


def intersect_aabb(origins: np.ndarray, dirs: np.ndarray, bbox_min, bbox_max):
    """Slab test; returns (t_near, t_far, hit) with t_near clamped at 0"""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    bbox_min = np.asarray(bbox_min, dtype=np.float64)
    bbox_max = np.asarray(bbox_max, dtype=np.float64)

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (bbox_min - origins) * inv
        t1 = (bbox_max - origins) * inv
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)

    parallel = dirs == 0.0
    inside = (origins >= bbox_min) & (origins <= bbox_max)
    lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
    hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)

    t_near = np.maximum(lo.max(axis=-1), 0.0)
    t_far = hi.min(axis=-1)
    hit = t_far > t_near
    t_near = np.where(hit, t_near, 0.0)
    t_far = np.where(hit, t_far, 0.0)
    return t_near, t_far, hit
