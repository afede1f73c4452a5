"""
Close-up camera synthesis and camera trajectories.
"""

import logging
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from core.errors import InputError, InvalidFactor
from core.geometry import Camera, Intrinsics, Pose

logger = logging.getLogger(__name__)


class CloseupMode(str, Enum):
    ZOOM = "zoom"
    DOLLY = "dolly"


def closeup_camera(ref: Camera, mode: CloseupMode, factor: float, depth_max: Optional[float] = None,
                   zoom_range: Tuple[float, float] = (4.0, 5.0),
                   dolly_range: Tuple[float, float] = (0.5, 0.6)) -> Camera:
    """Close-up of ``ref``.

    zoom: fx and fy multiplied by ``factor``; principal point and pose kept.
    dolly: camera center moved forward along the optical axis by
    ``factor * depth_max``; intrinsics kept.
    """
    mode = CloseupMode(mode)
    if mode is CloseupMode.ZOOM:
        low, high = zoom_range
        if not low <= factor <= high:
            raise InvalidFactor(f"zoom factor {factor} outside [{low}, {high}]")
        if factor == 1.0:
            return ref
        K = ref.intrinsics
        return Camera(K.with_focal(K.fx * factor, K.fy * factor), ref.pose)

    low, high = dolly_range
    if not low <= factor <= high:
        raise InvalidFactor(f"dolly factor {factor} outside [{low}, {high}]")
    if depth_max is None or not depth_max > 0:
        raise InvalidFactor(f"dolly needs a positive maximum depth, got {depth_max}")
    # moving the center by +d along the axis shifts camera-frame z by -d
    pose = Pose(ref.pose.rotation, ref.pose.translation - np.array([0.0, 0.0, factor * depth_max]))
    return Camera(ref.intrinsics, pose)


def _lerp(a: float, b: float, s: float) -> float:
    return a + (b - a) * s


def interpolate_cameras(a: Camera, b: Camera, n: int) -> List[Camera]:
    """``n`` cameras from ``a`` to ``b`` (both included).

    Centers and intrinsics move linearly, rotations by spherical interpolation.
    Both cameras must share the image size.
    """
    if n < 2:
        raise InputError(f"interpolation needs at least 2 cameras, got {n}")
    if a.shape != b.shape:
        raise InputError(f"cannot interpolate between image sizes {a.shape} and {b.shape}")

    slerp = Slerp([0.0, 1.0], Rotation.from_matrix(np.stack([a.pose.rotation, b.pose.rotation])))
    steps = np.linspace(0.0, 1.0, n)
    rotations = slerp(steps).as_matrix()

    cameras = []
    for k, s in enumerate(steps):
        if k == 0:
            cameras.append(a)
            continue
        if k == n - 1:
            cameras.append(b)
            continue
        Ka, Kb = a.intrinsics, b.intrinsics
        intrinsics = Intrinsics(_lerp(Ka.fx, Kb.fx, s), _lerp(Ka.fy, Kb.fy, s), _lerp(Ka.cx, Kb.cx, s),
                                _lerp(Ka.cy, Kb.cy, s), Ka.width, Ka.height)
        center = a.center + (b.center - a.center) * s
        cameras.append(Camera(intrinsics, Pose.from_center(_orthonormalize(rotations[k]), center)))
    return cameras


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(R)
    return u @ vt
