"""
Global point cloud from cross-view consistency checks.

Every valid pixel of view i is lifted to 3D and looked up in every other view
j at the nearest pixel. The pair is consistent when both the 3D points and the
colors agree (strictly) within tau_g and tau_c. Counts of consistent views give
the per-pixel count map; pixels with enough support become fused points at the
mean of their consistent samples.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import Thresholds
from core.errors import BehindCamera, InputError, TooFewViews
from core.geometry import Camera, MIN_DEPTH, back_project, project, round_half_up
from core.parallel import ordered_map
from core.scene_io import PointCloud, ViewRecord
from core.warping import WarpResult, rasterize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FusionThresholds:
    tau_g: float = 0.01
    tau_c: float = 0.1
    tau_num: int = 10

    def __post_init__(self):
        if not (self.tau_g > 0 and self.tau_c > 0 and self.tau_num > 0):
            raise InputError(f"fusion thresholds must be positive, got {self}")

    @classmethod
    def from_thresholds(cls, thresholds: Thresholds) -> "FusionThresholds":
        return cls(thresholds.tau_g, thresholds.tau_c, thresholds.tau_num)


@dataclass(frozen=True, eq=False)
class CountMap:
    view_id: str
    counts: np.ndarray


@dataclass(frozen=True, eq=False)
class FusedCloud:
    """Fused points with their support and the (view index, row, col) they came from."""

    cloud: PointCloud
    origin_view: np.ndarray
    origin_pixel: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return self.cloud.counts

    def __len__(self):
        return len(self.cloud)


@dataclass(frozen=True, eq=False)
class ViewPass:
    """Result of checking every valid pixel of one view against all other views."""

    view_index: int
    rows: np.ndarray
    cols: np.ndarray
    counts: np.ndarray
    position_sum: np.ndarray
    color_sum: np.ndarray


def pair_consistent(p_i, p_j, c_i, c_j, thresholds: FusionThresholds) -> bool:
    geometric = np.linalg.norm(np.asarray(p_i, dtype=np.float64) - np.asarray(p_j, dtype=np.float64))
    photometric = np.linalg.norm(np.asarray(c_i, dtype=np.float64) - np.asarray(c_j, dtype=np.float64))
    return bool(geometric < thresholds.tau_g and photometric < thresholds.tau_c)


def correspondence(views: Sequence[ViewRecord], i: int, pixel: Tuple[int, int],
                   j: int) -> Optional[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """Match pixel ``(u, v)`` of view i to the nearest pixel of view j.

    Returns (p_i, p_j, c_i, c_j) or None when the point leaves view j's frustum
    or lands on an invalid depth pixel.
    """
    if i == j:
        raise InputError("correspondence needs two different views")
    u, v = pixel
    source, other = views[i], views[j]
    depth = float(source.depth[v, u])
    if not depth > 0:
        raise InputError(f"{source.id}: pixel ({u}, {v}) has no valid depth")

    p_i = back_project(source.camera, (u, v), depth)
    try:
        hit = project(other.camera, p_i)
    except BehindCamera:
        return None
    h, w = other.shape
    qu, qv = int(round_half_up(hit.u)), int(round_half_up(hit.v))
    if not (0 <= qu < w and 0 <= qv < h) or not other.valid[qv, qu]:
        return None
    p_j = back_project(other.camera, (qu, qv), float(other.depth[qv, qu]))
    return p_i, p_j, source.image[v, u], other.image[qv, qu]


def _lookup(points: np.ndarray, other: ViewRecord):
    """Nearest-pixel lookup of world points in ``other``: (hit mask, rows, cols)."""
    u, v, z = other.camera.project_points(points)
    h, w = other.shape
    in_front = z > MIN_DEPTH
    qu = round_half_up(np.where(in_front, u, -1.0))
    qv = round_half_up(np.where(in_front, v, -1.0))
    hit = in_front & (qu >= 0) & (qu < w) & (qv >= 0) & (qv < h)
    rows = np.where(hit, qv, 0).astype(np.int64)
    cols = np.where(hit, qu, 0).astype(np.int64)
    hit &= other.valid[rows, cols]
    return hit, rows, cols


def check_view(views: Sequence[ViewRecord], i: int, thresholds: FusionThresholds) -> ViewPass:
    """Vectorized consistency pass of view i against every j != i, in ascending j."""
    source = views[i]
    rows, cols = np.nonzero(source.valid)
    points = source.camera.back_project_pixels(cols, rows, source.depth[rows, cols])
    colors = source.image[rows, cols].astype(np.float64)

    counts = np.zeros(len(rows), dtype=np.int64)
    position_sum = points.copy()
    color_sum = colors.copy()
    for j, other in enumerate(views):
        if j == i:
            continue
        hit, qr, qc = _lookup(points, other)
        matched = other.camera.back_project_pixels(qc, qr, np.where(hit, other.depth[qr, qc], 1.0))
        matched_colors = other.image[qr, qc].astype(np.float64)
        passed = (hit
                  & (np.linalg.norm(points - matched, axis=1) < thresholds.tau_g)
                  & (np.linalg.norm(colors - matched_colors, axis=1) < thresholds.tau_c))
        counts += passed
        position_sum += np.where(passed[:, None], matched, 0.0)
        color_sum += np.where(passed[:, None], matched_colors, 0.0)

    logger.debug("Fusion pass of %s: %d pixels, mean count %.2f", source.id, len(rows),
                 counts.mean() if len(counts) else 0.0)
    return ViewPass(i, rows, cols, counts, position_sum, color_sum)


def fusion_passes(views: Sequence[ViewRecord], thresholds: FusionThresholds, threads: int = 1) -> List[ViewPass]:
    if len(views) < 2:
        raise TooFewViews(f"fusion needs at least 2 views, got {len(views)}")
    return ordered_map(lambda i: check_view(views, i, thresholds), range(len(views)), threads)


def count_maps_from_passes(views: Sequence[ViewRecord], passes: Sequence[ViewPass]) -> List[CountMap]:
    maps = []
    for view, result in zip(views, passes):
        counts = np.zeros(view.shape, dtype=np.int64)
        counts[result.rows, result.cols] = result.counts
        maps.append(CountMap(view.id, counts))
    return maps


def build_count_map(views: Sequence[ViewRecord], thresholds: FusionThresholds, threads: int = 1) -> List[CountMap]:
    """Per view, the number of other views consistent with each pixel."""
    return count_maps_from_passes(views, fusion_passes(views, thresholds, threads))


def cloud_from_passes(passes: Sequence[ViewPass], thresholds: FusionThresholds, dedup: bool = False) -> FusedCloud:
    positions, colors, support, origin_view, origin_pixel = [], [], [], [], []
    for result in passes:
        keep = result.counts >= thresholds.tau_num
        samples = (result.counts[keep] + 1)[:, None]
        positions.append(result.position_sum[keep] / samples)
        colors.append(np.clip(result.color_sum[keep] / samples, 0.0, 1.0))
        support.append(result.counts[keep])
        origin_view.append(np.full(int(keep.sum()), result.view_index, dtype=np.int64))
        origin_pixel.append(np.stack([result.rows[keep], result.cols[keep]], axis=1))

    fused = FusedCloud(
        cloud=PointCloud(np.concatenate(positions), np.concatenate(colors), np.concatenate(support)),
        origin_view=np.concatenate(origin_view),
        origin_pixel=np.concatenate(origin_pixel).reshape(-1, 2).astype(np.int64),
    )
    if len(fused) == 0:
        logger.warning("Fused cloud is empty: no pixel reached %d consistent views", thresholds.tau_num)
    if dedup and len(fused):
        fused = voxel_dedup(fused, thresholds.tau_g)
    return fused


def fuse_points(views: Sequence[ViewRecord], thresholds: FusionThresholds, threads: int = 1,
                dedup: bool = False) -> FusedCloud:
    """Union over all views of the pixels with at least tau_num consistent views."""
    return cloud_from_passes(fusion_passes(views, thresholds, threads), thresholds, dedup)


def voxel_dedup(fused: FusedCloud, voxel: float) -> FusedCloud:
    """One point per occupied voxel: mean position and color, max support, first origin."""
    keys = np.floor(fused.cloud.positions / voxel).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    # renumber voxels by first appearance so output follows fusion order
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    group = rank[inverse]
    n = len(order)

    sizes = np.bincount(group, minlength=n).astype(np.float64)[:, None]
    positions = np.stack([np.bincount(group, fused.cloud.positions[:, k], n) for k in range(3)], axis=1) / sizes
    colors = np.stack([np.bincount(group, fused.cloud.colors[:, k], n) for k in range(3)], axis=1) / sizes
    support = np.zeros(n, dtype=np.int64)
    np.maximum.at(support, group, fused.support)

    firsts = first[order]
    logger.debug("Voxel dedup: %d points -> %d", len(fused), n)
    return FusedCloud(
        cloud=PointCloud(positions, np.clip(colors, 0.0, 1.0), support),
        origin_view=fused.origin_view[firsts],
        origin_pixel=fused.origin_pixel[firsts],
    )


def pixel_confidence(count_map: Union[CountMap, np.ndarray], tau_num: int) -> np.ndarray:
    """W_pixel = min(M / tau_num, 1)."""
    if tau_num < 1:
        raise InputError(f"tau_num must be at least 1, got {tau_num}")
    counts = count_map.counts if isinstance(count_map, CountMap) else np.asarray(count_map)
    return np.minimum(counts / float(tau_num), 1.0)


def project_cloud(cloud: Union[FusedCloud, PointCloud], camera: Camera) -> WarpResult:
    """Z-buffer splat of the cloud into ``camera``; ties go to the lower point index."""
    points = cloud.cloud if isinstance(cloud, FusedCloud) else cloud
    if len(points) == 0:
        logger.warning("Projecting an empty cloud")
        return WarpResult.empty(camera.shape)
    points_cam = camera.pose.transform(points.positions)
    return rasterize(points_cam, points.colors, camera.intrinsics, np.arange(len(points), dtype=np.int64),
                     np.ones(len(points), dtype=bool))
