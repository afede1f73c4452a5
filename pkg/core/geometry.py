"""
Pinhole cameras, rigid poses and the projection kernels.

Conventions:
  - Camera frame is right-handed: +x right, +y down, +z forward.
  - Poses are stored world-to-camera: x_cam = R @ x_world + t.
  - Continuous pixel coordinates put integer (u, v) at the pixel center;
    rasterization rounds half-up (floor(u + 0.5)).
"""

import math
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np

from core.errors import BehindCamera, InvalidCamera, NonPositiveDepth

MIN_DEPTH = 1e-12
ORTHONORMAL_TOL = 1e-9


def _frozen(array, shape) -> np.ndarray:
    out = np.array(array, dtype=np.float64).reshape(shape)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        values = (self.fx, self.fy, self.cx, self.cy)
        if not all(math.isfinite(v) for v in values):
            raise InvalidCamera("intrinsics", "non-finite intrinsics")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidCamera("intrinsics", f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width < 1 or self.height < 1:
            raise InvalidCamera("intrinsics", f"image size must be at least 1x1, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidCamera("intrinsics", f"principal point ({self.cx}, {self.cy}) outside the image")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, scale: int) -> "Intrinsics":
        """Intrinsics of the grid downsampled by an integer ``scale`` (ceil division)."""
        if scale == 1:
            return self
        return Intrinsics(
            fx=self.fx / scale,
            fy=self.fy / scale,
            cx=self.cx / scale,
            cy=self.cy / scale,
            width=-(-self.width // scale),
            height=-(-self.height // scale),
        )

    def with_focal(self, fx: float, fy: float) -> "Intrinsics":
        return Intrinsics(fx, fy, self.cx, self.cy, self.width, self.height)


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))
        R = self.rotation
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(self.translation))):
            raise InvalidCamera("pose", "non-finite rotation or translation")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise InvalidCamera("pose", "rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHONORMAL_TOL:
            raise InvalidCamera("pose", f"rotation determinant {np.linalg.det(R):.6f} != 1")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_center(cls, rotation, center) -> "Pose":
        R = np.asarray(rotation, dtype=np.float64)
        return cls(R, -R @ np.asarray(center, dtype=np.float64))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, -1.0, 0.0)) -> "Pose":
        """Camera at ``eye`` looking at ``target``; ``up`` is the world direction drawn upwards."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(-np.asarray(up, dtype=np.float64), forward)
        norm = np.linalg.norm(right)
        if norm < 1e-12:
            raise InvalidCamera("look_at", "up vector is parallel to the viewing direction")
        right /= norm
        down = np.cross(forward, right)
        return cls.from_center(np.stack([right, down, forward]), eye)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        """Viewing direction (+z of the camera) in world coordinates."""
        return self.rotation[2].copy()

    def inverse(self) -> "Pose":
        """Camera-to-world transform, packaged as a Pose."""
        R_inv = self.rotation.T
        return Pose(R_inv, -R_inv @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def same_as(self, other: "Pose") -> bool:
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation)

    def relative_to(self, source: "Pose") -> Tuple[np.ndarray, np.ndarray]:
        """(R, t) mapping source-camera coordinates into this camera.

        Identical poses give the exact identity so identity warps stay bit-exact.
        """
        if self.same_as(source):
            return np.eye(3), np.zeros(3)
        R = self.rotation @ source.rotation.T
        return R, self.translation - R @ source.translation

    def transform(self, points_world: np.ndarray) -> np.ndarray:
        """World points (N×3) into camera coordinates."""
        return np.asarray(points_world, dtype=np.float64) @ self.rotation.T + self.translation

    def untransform(self, points_cam: np.ndarray) -> np.ndarray:
        return (np.asarray(points_cam, dtype=np.float64) - self.translation) @ self.rotation


@dataclass(frozen=True, eq=False)
class Camera:
    intrinsics: Intrinsics
    pose: Pose

    def __post_init__(self):
        if not np.all(np.isfinite(self.pose.center)):
            raise InvalidCamera("camera", "camera center is not finite")

    @property
    def center(self) -> np.ndarray:
        return self.pose.center

    @property
    def shape(self) -> Tuple[int, int]:
        return self.intrinsics.shape

    def scaled(self, scale: int) -> "Camera":
        return self if scale == 1 else Camera(self.intrinsics.scaled(scale), self.pose)

    def same_as(self, other: "Camera") -> bool:
        return self.intrinsics == other.intrinsics and self.pose.same_as(other.pose)

    def project_points(self, points_world: np.ndarray):
        """Vectorized projection: returns (u, v, z); entries with z <= MIN_DEPTH are NaN in u, v."""
        return project_camera_points(self.intrinsics, self.pose.transform(points_world))

    def back_project_pixels(self, u, v, depth) -> np.ndarray:
        """Vectorized back-projection of pixel arrays with depths to world points (N×3)."""
        return self.pose.untransform(pixels_to_camera(self.intrinsics, u, v, depth))

    def pixel_grid(self):
        """(u, v) integer grids of shape (H, W)."""
        h, w = self.shape
        v, u = np.mgrid[0:h, 0:w]
        return u.astype(np.float64), v.astype(np.float64)


class Projection(NamedTuple):
    u: float
    v: float
    depth: float
    in_bounds: bool


def pixels_to_camera(intrinsics: Intrinsics, u, v, depth) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    x = (np.asarray(u, dtype=np.float64) - intrinsics.cx) / intrinsics.fx * depth
    y = (np.asarray(v, dtype=np.float64) - intrinsics.cy) / intrinsics.fy * depth
    return np.stack([x, y, depth], axis=-1)


def project_camera_points(intrinsics: Intrinsics, points_cam: np.ndarray):
    points_cam = np.asarray(points_cam, dtype=np.float64)
    z = points_cam[..., 2]
    in_front = z > MIN_DEPTH
    safe_z = np.where(in_front, z, 1.0)
    u = np.where(in_front, intrinsics.fx * points_cam[..., 0] / safe_z + intrinsics.cx, np.nan)
    v = np.where(in_front, intrinsics.fy * points_cam[..., 1] / safe_z + intrinsics.cy, np.nan)
    return u, v, z


def round_half_up(coords: np.ndarray) -> np.ndarray:
    return np.floor(coords + 0.5)


def project(camera: Camera, point_world) -> Projection:
    """Project one world point; raises BehindCamera when camera-frame z <= 1e-12."""
    point_cam = camera.pose.transform(np.asarray(point_world, dtype=np.float64).reshape(1, 3))[0]
    z = float(point_cam[2])
    if not z > MIN_DEPTH:
        raise BehindCamera(f"point {tuple(np.ravel(point_world))} has camera depth {z}")
    K = camera.intrinsics
    u = K.fx * point_cam[0] / z + K.cx
    v = K.fy * point_cam[1] / z + K.cy
    in_bounds = bool(0 <= u < K.width and 0 <= v < K.height)
    return Projection(float(u), float(v), z, in_bounds)


def back_project(camera: Camera, pixel, depth: float) -> np.ndarray:
    """World point seen at continuous ``pixel`` (u, v) with camera-frame ``depth``."""
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    u, v = pixel
    point_cam = pixels_to_camera(camera.intrinsics, [u], [v], [depth])
    return camera.pose.untransform(point_cam)[0]


def camera_distance(a: Camera, b: Camera) -> float:
    return float(np.linalg.norm(a.center - b.center))
