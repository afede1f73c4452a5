"""
Forward warping of posed views into target cameras.

Every warp goes through ``rasterize``: nearest-pixel point splatting with a
min-depth z-buffer. Splats closer than ``DEPTH_TIE`` in depth count as tied
and the smaller source row-major index wins, so results do not depend on
evaluation order.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from core.errors import EmptyInput, GridMismatch, NoValidDepth
from core.geometry import Camera, Intrinsics, MIN_DEPTH, pixels_to_camera, project_camera_points, round_half_up
from core.scene_io import ViewRecord

logger = logging.getLogger(__name__)

DEPTH_TIE = 1e-12
LOW_RES_SCALES = (2, 4, 8)
LOW_RES_MIN_DENSITY = 0.9


class Region(str, Enum):
    RELIABLE = "reliable"
    UNRELIABLE = "unreliable"


@dataclass(frozen=True, eq=False)
class WarpResult:
    """A warped (or projected) conditioning image on a target grid.

    Invalid pixels hold zeros in every other field. ``from_low_res`` marks
    pixels filled from the upsampled low-resolution level; ``suppressed``
    marks pixels removed by occlusion suppression.
    """

    rgb: np.ndarray
    depth: np.ndarray
    valid: np.ndarray
    source_view: np.ndarray
    reliable_origin: np.ndarray
    from_low_res: Optional[np.ndarray] = field(default=None)
    suppressed: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        for name in ("from_low_res", "suppressed"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, np.zeros(self.valid.shape, dtype=bool))

    @classmethod
    def empty(cls, shape: Tuple[int, int]) -> "WarpResult":
        h, w = shape
        return cls(
            rgb=np.zeros((h, w, 3)),
            depth=np.zeros((h, w)),
            valid=np.zeros((h, w), dtype=bool),
            source_view=np.zeros((h, w), dtype=np.int64),
            reliable_origin=np.zeros((h, w), dtype=bool),
        )

    @property
    def shape(self) -> Tuple[int, int]:
        return self.valid.shape

    @property
    def density(self) -> float:
        return float(self.valid.mean()) if self.valid.size else 0.0

    @property
    def high_res(self) -> np.ndarray:
        """Valid pixels produced at full resolution."""
        return self.valid & ~self.from_low_res

    def keep_only(self, keep: np.ndarray) -> "WarpResult":
        """Copy with pixels outside ``keep`` invalidated; removed pixels are flagged suppressed."""
        valid = self.valid & keep
        removed = self.valid & ~keep
        return WarpResult(
            rgb=np.where(valid[..., None], self.rgb, 0.0),
            depth=np.where(valid, self.depth, 0.0),
            valid=valid,
            source_view=np.where(valid, self.source_view, 0),
            reliable_origin=self.reliable_origin & valid,
            from_low_res=self.from_low_res & valid,
            suppressed=self.suppressed | removed,
        )


@dataclass(frozen=True, eq=False)
class ReliabilityMasks:
    reliable: np.ndarray
    unreliable: np.ndarray

    def select(self, region: Region) -> np.ndarray:
        return self.reliable if Region(region) is Region.RELIABLE else self.unreliable


def rasterize(points_cam: np.ndarray, colors: np.ndarray, intrinsics: Intrinsics, order: np.ndarray,
              reliable: np.ndarray, source_view: int = 0) -> WarpResult:
    """Z-buffer splat of camera-frame points onto the grid of ``intrinsics``.

    ``order`` is a unique integer per point used to break depth ties.
    """
    h, w = intrinsics.shape
    result = WarpResult.empty((h, w))
    if len(points_cam) == 0:
        return result

    u, v, z = project_camera_points(intrinsics, points_cam)
    in_front = z > MIN_DEPTH
    ui = round_half_up(np.where(in_front, u, -1.0))
    vi = round_half_up(np.where(in_front, v, -1.0))
    inside = in_front & (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
    if not inside.any():
        return result

    pixel = (vi[inside] * w + ui[inside]).astype(np.int64)
    depth = z[inside]
    rank = np.asarray(order)[inside]
    idx = np.flatnonzero(inside)

    sort = np.lexsort((rank, depth, pixel))
    pixel, depth, rank, idx = pixel[sort], depth[sort], rank[sort], idx[sort]

    starts = np.flatnonzero(np.r_[True, pixel[1:] != pixel[:-1]])
    group = np.cumsum(np.r_[True, pixel[1:] != pixel[:-1]]) - 1
    tied = depth - depth[starts][group] < DEPTH_TIE
    candidate = np.where(tied, rank, np.iinfo(np.int64).max)
    best_rank = np.minimum.reduceat(candidate, starts)
    winner = tied & (rank == best_rank[group])

    pixel, depth, idx = pixel[winner], depth[winner], idx[winner]
    rows, cols = np.divmod(pixel, w)
    result.rgb[rows, cols] = np.asarray(colors, dtype=np.float64)[idx]
    result.depth[rows, cols] = depth
    result.valid[rows, cols] = True
    result.source_view[rows, cols] = source_view
    result.reliable_origin[rows, cols] = np.asarray(reliable, dtype=bool)[idx]
    return result


def split_reliability(view: ViewRecord, confidence_quantile: float = 0.9,
                      grad_rel_threshold: float = 0.05) -> ReliabilityMasks:
    """Partition valid depth pixels into reliable / unreliable.

    Reliable: confidence at or above the (1 - quantile) lower quantile of the
    valid confidences, and normalized 3x3 Sobel depth gradient magnitude not
    above ``grad_rel_threshold`` times the local depth.
    """
    if not 0 < confidence_quantile < 1:
        raise ValueError(f"confidence_quantile must lie in (0, 1), got {confidence_quantile}")
    if grad_rel_threshold <= 0:
        raise ValueError(f"grad_rel_threshold must be positive, got {grad_rel_threshold}")

    valid = view.valid
    if not valid.any():
        raise NoValidDepth(view.id)

    cutoff = np.quantile(view.confidence[valid], 1.0 - confidence_quantile)
    confident = view.confidence >= cutoff

    # invalid neighbours (depth 0) count as edges
    gx = ndimage.sobel(view.depth, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(view.depth, axis=0, mode="nearest") / 8.0
    edge = np.hypot(gx, gy) > grad_rel_threshold * view.depth

    reliable = valid & confident & ~edge
    return ReliabilityMasks(reliable=reliable, unreliable=valid & ~reliable)


def forward_warp(view: ViewRecord, target: Camera, scale: int = 1, masks: Optional[ReliabilityMasks] = None,
                 region: Region = Region.RELIABLE, view_index: int = 0) -> WarpResult:
    """Splat the selected valid pixels of ``view`` into ``target`` downsampled by ``scale``.

    Without ``masks`` every valid pixel is warped and flagged reliable.
    """
    if int(scale) != scale or scale < 1:
        raise ValueError(f"scale must be a positive integer, got {scale}")
    grid = target.intrinsics.scaled(int(scale))

    selected = view.valid if masks is None else masks.select(region) & view.valid
    reliable = masks is None or Region(region) is Region.RELIABLE

    rows, cols = np.nonzero(selected)
    R, t = target.pose.relative_to(view.camera.pose)
    points = pixels_to_camera(view.camera.intrinsics, cols, rows, view.depth[rows, cols])
    points = points @ R.T + t

    order = rows.astype(np.int64) * view.shape[1] + cols
    result = rasterize(points, view.image[rows, cols], grid, order,
                       np.full(len(rows), reliable), source_view=view_index)
    logger.debug("Warped %d pixels of %s at scale %d: density %.4f", len(rows), view.id, scale, result.density)
    return result


def upsample_nearest(low: WarpResult, shape: Tuple[int, int], scale: int) -> WarpResult:
    """Nearest-neighbour upsampling; high pixel x reads low pixel floor(x / scale + 0.5)."""
    h, w = shape
    low_h, low_w = low.shape
    rows = np.minimum(np.floor(np.arange(h) / scale + 0.5).astype(np.int64), low_h - 1)
    cols = np.minimum(np.floor(np.arange(w) / scale + 0.5).astype(np.int64), low_w - 1)
    take = np.ix_(rows, cols)
    valid = low.valid[take]
    return WarpResult(
        rgb=low.rgb[take],
        depth=low.depth[take],
        valid=valid,
        source_view=low.source_view[take],
        reliable_origin=low.reliable_origin[take],
        from_low_res=valid.copy(),
    )


def overlay(primary: WarpResult, secondary: WarpResult) -> WarpResult:
    """``primary`` where valid, ``secondary`` elsewhere."""
    if primary.shape != secondary.shape:
        raise GridMismatch(f"cannot overlay grids {primary.shape} and {secondary.shape}")
    use = primary.valid
    fill = ~use & secondary.valid

    def pick(a, b):
        return np.where(use, a, np.where(fill, b, np.zeros_like(b)))

    return WarpResult(
        rgb=np.where(use[..., None], primary.rgb, np.where(fill[..., None], secondary.rgb, 0.0)),
        depth=pick(primary.depth, secondary.depth),
        valid=use | fill,
        source_view=pick(primary.source_view, secondary.source_view),
        reliable_origin=pick(primary.reliable_origin, secondary.reliable_origin),
        from_low_res=pick(primary.from_low_res, secondary.from_low_res),
        suppressed=(primary.suppressed | secondary.suppressed) & ~(use | fill),
    )


def combine_levels(high: WarpResult, low: WarpResult, scale: int) -> WarpResult:
    """Fill invalid pixels of ``high`` with the nearest-neighbour upsample of ``low``."""
    h, w = high.shape
    expected = (-(-h // scale), -(-w // scale))
    if low.shape != expected:
        raise GridMismatch(f"low grid {low.shape} is not {high.shape} downsampled by {scale} ({expected})")
    return overlay(high, upsample_nearest(low, (h, w), scale))


def choose_low_scale(view: ViewRecord, target: Camera, masks: ReliabilityMasks,
                     view_index: int = 0) -> Tuple[int, WarpResult]:
    """Smallest scale in (2, 4, 8) whose reliable warp reaches density 0.9, else 8."""
    for scale in LOW_RES_SCALES:
        low = forward_warp(view, target, scale, masks, Region.RELIABLE, view_index)
        if low.density >= LOW_RES_MIN_DENSITY:
            return scale, low
    return scale, low


def hierarchical_warp(view: ViewRecord, target: Camera, quantile: float = 0.9, grad_threshold: float = 0.05,
                      view_index: int = 0, scale: Optional[int] = None) -> WarpResult:
    """Two-resolution warp of the reliable region, then of the unreliable region.

    The reliable result takes precedence. Regions that no source pixel reaches
    at either resolution stay invalid.
    """
    masks = split_reliability(view, quantile, grad_threshold)
    if scale is None:
        scale, low_reliable = choose_low_scale(view, target, masks, view_index)
    else:
        low_reliable = forward_warp(view, target, scale, masks, Region.RELIABLE, view_index)

    high_reliable = forward_warp(view, target, 1, masks, Region.RELIABLE, view_index)
    reliable = combine_levels(high_reliable, low_reliable, scale)

    if not masks.unreliable.any():
        return reliable

    high_unreliable = forward_warp(view, target, 1, masks, Region.UNRELIABLE, view_index)
    low_unreliable = forward_warp(view, target, scale, masks, Region.UNRELIABLE, view_index)
    unreliable = combine_levels(high_unreliable, low_unreliable, scale)

    logger.debug("Hierarchical warp of %s: scale %d, reliable density %.4f, unreliable density %.4f",
                 view.id, scale, reliable.density, unreliable.density)
    return overlay(reliable, unreliable)


def merge_views(results: Sequence[WarpResult], ref_cameras: Sequence[Camera], target: Camera) -> WarpResult:
    """Per pixel, keep the valid result whose camera center is closest to the target's.

    Distance ties go to the lower index; ``source_view`` holds the winning index.
    """
    if not results:
        raise EmptyInput("merge_views needs at least one warp result")
    if len(results) != len(ref_cameras):
        raise GridMismatch(f"{len(results)} results but {len(ref_cameras)} cameras")
    shape = results[0].shape
    if any(r.shape != shape for r in results):
        raise GridMismatch("all warp results must share the target grid")

    distances = [float(np.linalg.norm(cam.center - target.center)) for cam in ref_cameras]
    ranking = sorted(range(len(results)), key=lambda i: (distances[i], i))

    merged = WarpResult.empty(shape)
    for index in ranking:
        result = results[index]
        take = result.valid & ~merged.valid
        merged.rgb[take] = result.rgb[take]
        merged.depth[take] = result.depth[take]
        merged.source_view[take] = index
        merged.reliable_origin[take] = result.reliable_origin[take]
        merged.from_low_res[take] = result.from_low_res[take]
        merged.valid[take] = True
    for result in results:
        merged.suppressed[:] |= result.suppressed
    merged.suppressed[merged.valid] = False
    return merged
