"""
Analytic synthetic scenes: planes and spheres with checker textures.

Renders are exact ray casts, so depths, colors and visibility are known in
closed form. Scenes are JSON documents, e.g.

    {
      "seed": 7,
      "primitives": [
        {"type": "plane", "center": [0, 0, 4], "normal": [0, 0, -1], "up": [0, -1, 0],
         "half_extent": null, "texture": {"period": 0.25, "color_a": [0.9, 0.8, 0.2],
                                          "color_b": [0.1, 0.3, 0.7], "jitter": 0.05}},
        {"type": "sphere", "center": [0.3, 0, 2.5], "radius": 0.4, "texture": {"period": 0.1}}
      ],
      "noise": {"depth_sigma": 0.0, "depth_offset": 0.0, "offset_views": [],
                "low_confidence_band": null},
      "camera": {"width": 64, "height": 48, "fx": 60, "fy": 60, "cx": 32, "cy": 24},
      "trajectory": {"start": [-0.5, 0, 0], "end": [0.5, 0, 0], "look_at": [0, 0, 4], "frames": 25}
    }
"""

import json
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import GridMismatch, InputError
from core.geometry import Camera, Intrinsics, MIN_DEPTH, Pose
from core.parallel import ordered_map
from core.scene_io import ViewRecord
from core.warping import WarpResult

logger = logging.getLogger(__name__)

RAY_EPS = 1e-12


class LeakLabel(IntEnum):
    HOLE = 0
    VISIBLE = 1
    LEAK = 2


@dataclass(frozen=True)
class Checker:
    period: float = 0.25
    color_a: Tuple[float, float, float] = (0.9, 0.8, 0.2)
    color_b: Tuple[float, float, float] = (0.1, 0.3, 0.7)
    jitter: float = 0.0

    def __post_init__(self):
        if not self.period > 0:
            raise InputError(f"checker period must be positive, got {self.period}")
        if self.jitter < 0:
            raise InputError(f"checker jitter must be nonnegative, got {self.jitter}")


@dataclass(frozen=True)
class Plane:
    center: Tuple[float, float, float]
    normal: Tuple[float, float, float]
    up: Tuple[float, float, float] = (0.0, -1.0, 0.0)
    half_extent: Optional[Tuple[float, float]] = None
    texture: Checker = field(default_factory=Checker)

    def frame(self):
        """(origin, unit normal, right axis, up axis) of the plane."""
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        up = np.asarray(self.up, dtype=np.float64)
        up = up - np.dot(up, n) * n
        norm = np.linalg.norm(up)
        if norm < RAY_EPS:
            raise InputError("plane 'up' must not be parallel to its normal")
        up /= norm
        return np.asarray(self.center, dtype=np.float64), n, np.cross(up, n), up

    def intersect(self, origin: np.ndarray, directions: np.ndarray):
        """Ray parameters (inf on miss) and texture coordinates of the hits."""
        center, n, right, up = self.frame()
        denom = directions @ n
        safe = np.where(np.abs(denom) > RAY_EPS, denom, 1.0)
        t = np.where(np.abs(denom) > RAY_EPS, np.dot(center - origin, n) / safe, np.inf)
        t = np.where(t > MIN_DEPTH, t, np.inf)
        offset = origin + directions * np.where(np.isfinite(t), t, 0.0)[:, None] - center
        a, b = offset @ right, offset @ up
        if self.half_extent is not None:
            hx, hy = self.half_extent
            t = np.where((np.abs(a) <= hx) & (np.abs(b) <= hy), t, np.inf)
        return t, a, b


@dataclass(frozen=True)
class Sphere:
    center: Tuple[float, float, float]
    radius: float
    texture: Checker = field(default_factory=Checker)

    def __post_init__(self):
        if not self.radius > 0:
            raise InputError(f"sphere radius must be positive, got {self.radius}")

    def intersect(self, origin: np.ndarray, directions: np.ndarray):
        center = np.asarray(self.center, dtype=np.float64)
        oc = origin - center
        a = np.einsum("ij,ij->i", directions, directions)
        b = 2.0 * (directions @ oc)
        c = float(oc @ oc) - self.radius ** 2
        disc = b * b - 4 * a * c
        root = np.sqrt(np.maximum(disc, 0.0))
        near = (-b - root) / (2 * a)
        far = (-b + root) / (2 * a)
        t = np.where(near > MIN_DEPTH, near, np.where(far > MIN_DEPTH, far, np.inf))
        t = np.where(disc >= 0, t, np.inf)

        local = origin + directions * np.where(np.isfinite(t), t, 0.0)[:, None] - center
        longitude = np.arctan2(local[:, 0], local[:, 2])
        latitude = np.arcsin(np.clip(local[:, 1] / self.radius, -1.0, 1.0))
        return t, longitude * self.radius, latitude * self.radius


Primitive = Union[Plane, Sphere]


@dataclass(frozen=True)
class NoiseSpec:
    depth_sigma: float = 0.0
    depth_offset: float = 0.0
    offset_views: Tuple[int, ...] = ()
    low_confidence_band: Optional[Tuple[int, int, float]] = None  # (first column, end column, confidence)


@dataclass(frozen=True)
class Trajectory:
    start: Tuple[float, float, float]
    end: Tuple[float, float, float]
    look_at: Tuple[float, float, float]
    frames: int = 25
    up: Tuple[float, float, float] = (0.0, -1.0, 0.0)


@dataclass(frozen=True)
class SceneSpec:
    primitives: Tuple[Primitive, ...]
    seed: int = 0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    intrinsics: Optional[Intrinsics] = None
    trajectory: Optional[Trajectory] = None

    def __post_init__(self):
        if not self.primitives:
            raise InputError("a scene needs at least one primitive")


def _hash_cells(seed: int, primitive: int, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Uniform values in [0, 1) per integer cell, stable across platforms."""
    with np.errstate(over="ignore"):
        x = (i.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
             ^ j.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
             ^ np.uint64((seed * 1000003 + primitive) & 0xFFFFFFFFFFFFFFFF))
        x ^= x >> np.uint64(33)
        x *= np.uint64(0xFF51AFD7ED558CCD)
        x ^= x >> np.uint64(33)
        x *= np.uint64(0xC4CEB9FE1A85EC53)
        x ^= x >> np.uint64(33)
    return (x >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def shade(texture: Checker, a: np.ndarray, b: np.ndarray, seed: int = 0, primitive: int = 0) -> np.ndarray:
    """Checker color at texture coordinates (a, b)."""
    i = np.floor(a / texture.period).astype(np.int64)
    j = np.floor(b / texture.period).astype(np.int64)
    pick_a = ((i + j) % 2 == 0)[:, None]
    colors = np.where(pick_a, np.asarray(texture.color_a, dtype=np.float64),
                      np.asarray(texture.color_b, dtype=np.float64))
    if texture.jitter > 0:
        offset = (2.0 * _hash_cells(seed, primitive, i, j) - 1.0) * texture.jitter
        colors = colors + offset[:, None]
    return np.clip(colors, 0.0, 1.0)


def camera_rays(camera: Camera):
    """World-space ray origin and per-pixel directions scaled so camera-frame z = 1."""
    u, v = camera.pixel_grid()
    K = camera.intrinsics
    directions_cam = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1).reshape(-1, 3)
    return camera.center, directions_cam @ camera.pose.rotation


def render_analytic(scene: SceneSpec, camera: Camera, view_index: int = 0,
                    view_id: Optional[str] = None) -> Tuple[ViewRecord, np.ndarray]:
    """Ray-cast ``scene`` from ``camera``: (ViewRecord, hit mask).

    Depth is the camera-frame z of the nearest hit (0 on misses); ties go to
    the earlier primitive. Noise draws come from (seed, view_index).
    """
    h, w = camera.shape
    origin, directions = camera_rays(camera)

    best_t = np.full(h * w, np.inf)
    colors = np.zeros((h * w, 3))
    for index, primitive in enumerate(scene.primitives):
        t, a, b = primitive.intersect(origin, directions)
        closer = t < best_t
        if closer.any():
            best_t[closer] = t[closer]
            colors[closer] = shade(primitive.texture, a[closer], b[closer], scene.seed, index)

    hit = np.isfinite(best_t).reshape(h, w)
    depth = np.where(hit, best_t.reshape(h, w), 0.0)
    image = colors.reshape(h, w, 3)
    confidence = np.ones((h, w))

    noise = scene.noise
    if noise.depth_sigma > 0:
        rng = np.random.default_rng([scene.seed, view_index])
        depth = np.where(hit, depth + rng.normal(0.0, noise.depth_sigma, size=(h, w)), 0.0)
    if view_index in noise.offset_views and noise.depth_offset:
        depth = np.where(hit, depth + noise.depth_offset, 0.0)
    if noise.low_confidence_band is not None:
        first, end, value = noise.low_confidence_band
        confidence[:, int(first):int(end)] = value
    depth = np.where(depth > 0, depth, 0.0)
    # noise can push a hit behind the camera
    hit = hit & (depth > 0)

    view = ViewRecord(view_id or f"v{view_index:03d}", image, depth, confidence, camera)
    return view, hit


def trajectory_cameras(scene: SceneSpec) -> List[Camera]:
    """Look-at cameras with centers evenly spaced from start to end."""
    if scene.intrinsics is None or scene.trajectory is None:
        raise InputError("scene has no camera/trajectory section")
    traj = scene.trajectory
    if traj.frames < 1:
        raise InputError(f"trajectory needs at least one frame, got {traj.frames}")
    start, end = np.asarray(traj.start, dtype=np.float64), np.asarray(traj.end, dtype=np.float64)
    steps = np.linspace(0.0, 1.0, traj.frames) if traj.frames > 1 else np.zeros(1)
    return [Camera(scene.intrinsics, Pose.look_at(start + (end - start) * s, traj.look_at, traj.up))
            for s in steps]


def render_views(scene: SceneSpec, cameras: Sequence[Camera], threads: int = 1) -> List[ViewRecord]:
    return ordered_map(lambda item: render_analytic(scene, item[1], item[0])[0], list(enumerate(cameras)), threads)


def label_leaks(warp: WarpResult, gt: ViewRecord, epsilon: float = 0.1) -> np.ndarray:
    """LEAK where a valid warped pixel lies more than ``epsilon`` behind the true surface."""
    if warp.shape != gt.shape:
        raise GridMismatch(f"warp grid {warp.shape} differs from ground truth {gt.shape}")
    labels = np.full(warp.shape, LeakLabel.HOLE, dtype=np.int8)
    labels[warp.valid] = LeakLabel.VISIBLE
    leak = warp.valid & gt.valid & (warp.depth - gt.depth > epsilon)
    labels[leak] = LeakLabel.LEAK
    return labels


# ---------------------------------------------------------------- JSON scenes

def _checker(data: Optional[dict]) -> Checker:
    data = dict(data or {})
    for key in ("color_a", "color_b"):
        if key in data:
            data[key] = tuple(float(x) for x in data[key])
    return Checker(**data)


def _primitive(data: dict) -> Primitive:
    data = dict(data)
    kind = data.pop("type", None)
    texture = _checker(data.pop("texture", None))
    try:
        if kind == "plane":
            extent = data.pop("half_extent", None)
            return Plane(center=tuple(data.pop("center")), normal=tuple(data.pop("normal")),
                         up=tuple(data.pop("up", (0.0, -1.0, 0.0))),
                         half_extent=None if extent is None else tuple(extent), texture=texture, **data)
        if kind == "sphere":
            return Sphere(center=tuple(data.pop("center")), radius=float(data.pop("radius")), texture=texture, **data)
    except (KeyError, TypeError) as e:
        raise InputError(f"malformed {kind} primitive: {e}")
    raise InputError(f"unknown primitive type '{kind}'")


def scene_from_dict(data: dict) -> SceneSpec:
    try:
        noise = dict(data.get("noise") or {})
        if "offset_views" in noise:
            noise["offset_views"] = tuple(int(i) for i in noise["offset_views"])
        if noise.get("low_confidence_band") is not None:
            noise["low_confidence_band"] = tuple(noise["low_confidence_band"])
        camera = data.get("camera")
        trajectory = data.get("trajectory")
        return SceneSpec(
            primitives=tuple(_primitive(p) for p in data.get("primitives", [])),
            seed=int(data.get("seed", 0)),
            noise=NoiseSpec(**noise),
            intrinsics=None if camera is None else Intrinsics(**camera),
            trajectory=None if trajectory is None else Trajectory(**trajectory),
        )
    except TypeError as e:
        raise InputError(f"malformed scene: {e}")


def load_scene(path) -> SceneSpec:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise InputError(f"scene file '{path}' not found")
    except json.JSONDecodeError as e:
        raise InputError(f"scene file '{path}' is not valid JSON: {e}")
    return scene_from_dict(data)


DEFAULT_SCENE = {
    "seed": 7,
    "primitives": [
        {"type": "plane", "center": [0.06, 0.0, 0.8], "normal": [0.0, 0.0, -1.0], "half_extent": [0.05, 0.06],
         "texture": {"period": 0.03, "color_a": [0.95, 0.35, 0.2], "color_b": [0.25, 0.8, 0.3]}},
        {"type": "plane", "center": [0.0, 0.0, 1.2], "normal": [0.0, 0.0, -1.0],
         "texture": {"period": 0.05, "color_a": [0.9, 0.85, 0.6], "color_b": [0.2, 0.25, 0.6], "jitter": 0.05}},
    ],
    "camera": {"width": 48, "height": 36, "fx": 120.0, "fy": 120.0, "cx": 24.0, "cy": 18.0},
    "trajectory": {"start": [-0.03, 0.0, 0.0], "end": [0.03, 0.0, 0.0], "look_at": [0.0, 0.0, 1.2], "frames": 25},
}
