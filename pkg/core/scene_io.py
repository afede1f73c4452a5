"""
Datasets on disk: manifest, PNG images, PFM depth/confidence rasters,
camera lists and binary PLY point clouds.

Manifest line (UTF-8, '#' starts a comment):
    id width height fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 t0 t1 t2 image depth confidence
Camera list lines are the same without the three paths.
"""

import contextlib
import logging
import os
import re
import tempfile
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from plyfile import PlyData, PlyElement

from core.errors import (
    DimensionMismatch,
    InvalidCamera,
    InvalidRaster,
    IoFailure,
    MissingFile,
)
from core.geometry import Camera, Intrinsics, Pose
from core.parallel import ordered_map

logger = logging.getLogger(__name__)

CAMERA_FIELDS = 19
MANIFEST_FIELDS = CAMERA_FIELDS + 3


@dataclass(frozen=True, eq=False)
class ViewRecord:
    """One posed view: image, depth (0.0 = invalid), depth confidence and camera."""

    id: str
    image: np.ndarray
    depth: np.ndarray
    confidence: np.ndarray
    camera: Camera

    def __post_init__(self):
        h, w = self.camera.shape
        image = np.array(self.image, dtype=np.float64)
        depth = np.asarray(self.depth, dtype=np.float64)
        confidence = np.array(self.confidence, dtype=np.float64)
        if image.shape != (h, w, 3):
            raise DimensionMismatch(self.id, f"image is {image.shape}, camera declares {(h, w, 3)}")
        if depth.shape != (h, w):
            raise DimensionMismatch(self.id, f"depth is {depth.shape}, camera declares {(h, w)}")
        if confidence.shape != (h, w):
            raise DimensionMismatch(self.id, f"confidence is {confidence.shape}, camera declares {(h, w)}")
        if image.size and (image.min() < 0.0 or image.max() > 1.0):
            raise InvalidRaster(self.id, "image values outside [0, 1]")
        if np.any(~np.isfinite(confidence)) or (confidence.size and confidence.min() < 0.0):
            raise InvalidRaster(self.id, "confidence must be finite and nonnegative")

        valid = np.isfinite(depth) & (depth > 0)
        depth = np.where(valid, depth, 0.0)
        for name, array in (("image", image), ("depth", depth), ("confidence", confidence)):
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0

    @property
    def shape(self) -> Tuple[int, int]:
        return self.camera.shape

    @property
    def max_depth(self) -> float:
        valid = self.valid
        return float(self.depth[valid].max()) if valid.any() else 0.0


@dataclass(frozen=True, eq=False)
class PointCloud:
    positions: np.ndarray
    colors: np.ndarray
    counts: Optional[np.ndarray] = None

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if len(positions) != len(colors):
            raise DimensionMismatch("point cloud", f"{len(positions)} positions but {len(colors)} colors")
        if not np.all(np.isfinite(positions)):
            raise InvalidRaster("point cloud", "non-finite positions")
        if colors.size and (colors.min() < 0.0 or colors.max() > 1.0):
            raise InvalidRaster("point cloud", "colors outside [0, 1]")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "colors", colors)
        if self.counts is not None:
            counts = np.asarray(self.counts).reshape(-1)
            if len(counts) != len(positions):
                raise DimensionMismatch("point cloud", f"{len(counts)} counts for {len(positions)} points")
            if counts.size and counts.min() < 0:
                raise InvalidRaster("point cloud", "negative counts")
            object.__setattr__(self, "counts", counts.astype(np.int64))

    def __len__(self):
        return len(self.positions)


# ---------------------------------------------------------------- atomic writes

@contextlib.contextmanager
def atomic_path(path) -> Iterator[str]:
    """Yield a temporary path next to ``path``; it replaces ``path`` on success."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".", suffix=".tmp")
        os.close(fd)
    except OSError as e:
        raise IoFailure(path, e)
    try:
        yield tmp_path
        os.replace(tmp_path, path)
    except IoFailure:
        raise
    except OSError as e:
        raise IoFailure(path, e)
    finally:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)


# ---------------------------------------------------------------- rasters

def read_pfm(path) -> np.ndarray:
    """Single-channel PFM as a float32 (H, W) array, rows top to bottom."""
    try:
        with open(path, "rb") as f:
            header = f.readline().decode("ascii").rstrip()
            if header != "Pf":
                raise InvalidRaster(path, f"expected a single-channel 'Pf' file, got '{header}'")
            dim_match = re.match(r"^(\d+)\s+(\d+)\s*$", f.readline().decode("ascii"))
            if not dim_match:
                raise InvalidRaster(path, "malformed PFM header")
            width, height = map(int, dim_match.groups())
            scale = float(f.readline().decode("ascii").strip())
            endian = "<" if scale < 0 else ">"
            data = np.frombuffer(f.read(), dtype=endian + "f4")
    except InvalidRaster:
        raise
    except OSError as e:
        raise IoFailure(path, e)
    except (UnicodeDecodeError, ValueError) as e:
        raise InvalidRaster(path, f"malformed PFM header: {e}")

    if data.size != width * height:
        raise InvalidRaster(path, f"expected {width * height} samples, found {data.size}")
    # PFM stores the bottom row first
    return np.flipud(data.reshape(height, width)).astype(np.float32)


def write_pfm(path, raster: np.ndarray):
    """Write a (H, W) raster as little-endian float32 PFM (scale -1.0)."""
    raster = np.asarray(raster, dtype=np.float32)
    if raster.ndim != 2:
        raise InvalidRaster(path, f"expected a 2-D raster, got shape {raster.shape}")
    height, width = raster.shape
    payload = np.flipud(raster).astype("<f4").tobytes()
    with atomic_path(path) as tmp_path:
        with open(tmp_path, "wb") as f:
            f.write(f"Pf\n{width} {height}\n-1.0\n".encode("ascii"))
            f.write(payload)


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def read_png(path) -> np.ndarray:
    """RGB image as float64 (H, W, 3) in [0, 1]."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as e:
        raise IoFailure(path, e)


def read_mask_png(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L")) > 127
    except OSError as e:
        raise IoFailure(path, e)


def read_index_png(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L")).astype(np.int64)
    except OSError as e:
        raise IoFailure(path, e)


def write_png(path, image: np.ndarray):
    """RGB image in [0, 1] as 8-bit PNG."""
    _save_png(path, Image.fromarray(to_uint8(image)))


def write_mask_png(path, mask: np.ndarray):
    """Boolean mask as 8-bit PNG (255 = true)."""
    _save_png(path, Image.fromarray(np.asarray(mask, dtype=bool).astype(np.uint8) * 255))


def write_index_png(path, index: np.ndarray):
    """Per-pixel view index as 8-bit PNG; indices must fit in 0..255."""
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() > 255):
        raise InvalidRaster(path, "view index outside 0..255")
    _save_png(path, Image.fromarray(index.astype(np.uint8)))


def _save_png(path, img: Image.Image):
    with atomic_path(path) as tmp_path:
        img.save(tmp_path, format="PNG")


# ---------------------------------------------------------------- cameras

def _format_camera(view_id: str, camera: Camera) -> List[str]:
    K = camera.intrinsics
    numbers = [K.fx, K.fy, K.cx, K.cy, *camera.pose.rotation.ravel(), *camera.pose.translation]
    return [view_id, str(K.width), str(K.height)] + [repr(float(x)) for x in numbers]


def _parse_camera(view_id: str, tokens: Sequence[str]) -> Camera:
    try:
        width, height = int(tokens[0]), int(tokens[1])
        numbers = [float(x) for x in tokens[2:CAMERA_FIELDS - 1]]
    except ValueError as e:
        raise InvalidCamera(view_id, f"unparsable camera parameters: {e}")
    fx, fy, cx, cy = numbers[:4]
    try:
        intrinsics = Intrinsics(fx, fy, cx, cy, width, height)
        pose = Pose(np.array(numbers[4:13]).reshape(3, 3), np.array(numbers[13:16]))
        return Camera(intrinsics, pose)
    except InvalidCamera as e:
        raise InvalidCamera(view_id, str(e))


def _content_lines(path) -> List[Tuple[int, List[str]]]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw_lines = f.readlines()
    except FileNotFoundError:
        raise MissingFile("manifest", path)
    except OSError as e:
        raise IoFailure(path, e)

    lines = []
    for number, line in enumerate(raw_lines, 1):
        content = line.split("#", 1)[0].strip()
        if content:
            lines.append((number, content.split()))
    return lines


def read_cameras(path) -> List[Tuple[str, Camera]]:
    """Camera list file as (id, Camera) pairs in file order."""
    cameras = []
    for number, tokens in _content_lines(path):
        view_id = tokens[0]
        if len(tokens) != CAMERA_FIELDS:
            raise InvalidCamera(view_id, f"line {number}: expected {CAMERA_FIELDS} fields, got {len(tokens)}")
        cameras.append((view_id, _parse_camera(view_id, tokens[1:])))
    return cameras


def write_cameras(path, cameras: Sequence[Tuple[str, Camera]]):
    lines = ["# id width height fx fy cx cy R(row-major, 9) t(3)"]
    lines += [" ".join(_format_camera(view_id, camera)) for view_id, camera in cameras]
    _write_text(path, "\n".join(lines) + "\n")


def _write_text(path, text: str):
    with atomic_path(path) as tmp_path:
        with open(tmp_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)


# ---------------------------------------------------------------- datasets

@dataclass(frozen=True)
class ManifestEntry:
    view_id: str
    camera: Camera
    image_path: str
    depth_path: str
    confidence_path: str


def read_manifest(manifest_path) -> List[ManifestEntry]:
    root = os.path.dirname(os.path.abspath(manifest_path))
    entries = []
    for number, tokens in _content_lines(manifest_path):
        view_id = tokens[0]
        if len(tokens) != MANIFEST_FIELDS:
            raise InvalidCamera(view_id, f"manifest line {number}: expected {MANIFEST_FIELDS} fields, got {len(tokens)}")
        camera = _parse_camera(view_id, tokens[1:CAMERA_FIELDS])
        image_path, depth_path, confidence_path = (os.path.join(root, p) for p in tokens[CAMERA_FIELDS:])
        entries.append(ManifestEntry(view_id, camera, image_path, depth_path, confidence_path))
    return entries


def _load_view(entry: ManifestEntry) -> ViewRecord:
    for path in (entry.image_path, entry.depth_path, entry.confidence_path):
        if not os.path.isfile(path):
            raise MissingFile(entry.view_id, path)

    image = read_png(entry.image_path)
    depth = read_pfm(entry.depth_path)
    confidence = read_pfm(entry.confidence_path)
    return ViewRecord(entry.view_id, image, depth, confidence, entry.camera)


def load_dataset(manifest_path, threads: int = 1) -> List[ViewRecord]:
    """One ViewRecord per manifest line, in manifest order."""
    entries = read_manifest(manifest_path)
    views = ordered_map(_load_view, entries, threads)
    logger.debug("Loaded %d views from %s", len(views), manifest_path)
    return views


def write_dataset(views: Sequence[ViewRecord], out_dir, manifest_name: str = "manifest.txt") -> str:
    """Write rasters under ``out_dir/views`` and a manifest; returns the manifest path."""
    lines = ["# id width height fx fy cx cy R(9) t(3) image depth confidence"]
    for view in views:
        rel = {
            "image": f"views/{view.id}.png",
            "depth": f"views/{view.id}_depth.pfm",
            "confidence": f"views/{view.id}_conf.pfm",
        }
        write_png(os.path.join(out_dir, rel["image"]), view.image)
        write_pfm(os.path.join(out_dir, rel["depth"]), view.depth)
        write_pfm(os.path.join(out_dir, rel["confidence"]), view.confidence)
        lines.append(" ".join(_format_camera(view.id, view.camera) + [rel["image"], rel["depth"], rel["confidence"]]))

    manifest_path = os.path.join(out_dir, manifest_name)
    _write_text(manifest_path, "\n".join(lines) + "\n")
    return manifest_path


# ---------------------------------------------------------------- point clouds

def write_ply(cloud: PointCloud, path):
    """Binary little-endian PLY with x,y,z (float32), red,green,blue (uint8)[, count (uint32)]."""
    dtype = [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")]
    if cloud.counts is not None:
        dtype.append(("count", "<u4"))

    vertices = np.empty(len(cloud), dtype=dtype)
    positions = cloud.positions.astype(np.float32)
    colors = to_uint8(cloud.colors)
    for axis, name in enumerate(("x", "y", "z")):
        vertices[name] = positions[:, axis]
    for channel, name in enumerate(("red", "green", "blue")):
        vertices[name] = colors[:, channel]
    if cloud.counts is not None:
        vertices["count"] = cloud.counts.astype(np.uint32)

    ply = PlyData([PlyElement.describe(vertices, "vertex")], text=False, byte_order="<")
    with atomic_path(path) as tmp_path:
        with open(tmp_path, "wb") as f:
            ply.write(f)


def read_ply(path) -> PointCloud:
    try:
        ply = PlyData.read(os.fspath(path))
    except OSError as e:
        raise IoFailure(path, e)
    except Exception as e:
        raise InvalidRaster(path, f"unreadable PLY: {e}")

    vertices = ply["vertex"]
    names = [p.name for p in vertices.properties]
    positions = np.stack([np.asarray(vertices[name], dtype=np.float32) for name in ("x", "y", "z")], axis=-1)
    colors = np.stack([np.asarray(vertices[name], dtype=np.float64) for name in ("red", "green", "blue")], axis=-1)
    counts = np.asarray(vertices["count"], dtype=np.int64) if "count" in names else None
    return PointCloud(positions.astype(np.float64), colors.reshape(-1, 3) / 255.0, counts)


def pointcloud_ply_roundtrip(cloud: PointCloud, path) -> PointCloud:
    write_ply(cloud, path)
    return read_ply(path)
