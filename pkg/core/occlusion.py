"""
Occlusion-aware suppression of background leakage in warped images.

A warped depth map is dilated towards the foreground (window minimum) with a
kernel that grows as the warp gets sparser; pixels much deeper than the
dilated depth are background seen through gaps in the foreground.
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

from core.errors import GridMismatch
from core.warping import WarpResult

logger = logging.getLogger(__name__)

MAX_KERNEL = 9
MIN_DENSITY = 1.0 / 81.0


@dataclass(frozen=True, eq=False)
class OcclusionMask:
    keep: np.ndarray  # False = suppressed


def kernel_from_density(density: float) -> int:
    """Odd dilation kernel size for a warp with the given valid-pixel fraction.

    k is the smallest odd integer >= ceil(1 / sqrt(density)), clamped to [1, 9].
    """
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must lie in [0, 1], got {density}")
    spacing = math.ceil(1.0 / math.sqrt(max(density, MIN_DENSITY)))
    k = spacing if spacing % 2 == 1 else spacing + 1
    return int(min(max(k, 1), MAX_KERNEL))


def dilate_depth(depth: np.ndarray, valid: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Minimum valid depth in the k×k window of every pixel (windows truncated at borders).

    Returns (D_dilate, valid_dilate); pixels whose window holds no valid depth are invalid.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 1, got {k}")
    if k == 1:
        return np.where(valid, depth, 0.0), valid.copy()

    masked = np.where(valid, depth, np.inf)
    window_min = ndimage.minimum_filter(masked, size=k, mode="constant", cval=np.inf)
    dilated_valid = np.isfinite(window_min)
    return np.where(dilated_valid, window_min, 0.0), dilated_valid


def occlusion_mask(d_warp: np.ndarray, warp_valid: np.ndarray, d_dilate: np.ndarray,
                   dilate_valid: np.ndarray, tau_d: float = 0.2) -> OcclusionMask:
    """keep = False exactly where both depths are valid and D_warp - D_dilate > tau_d."""
    if d_warp.shape != d_dilate.shape:
        raise GridMismatch(f"depth grids differ: {d_warp.shape} vs {d_dilate.shape}")
    both = warp_valid & dilate_valid
    violation = both & (d_warp - d_dilate > tau_d)
    return OcclusionMask(keep=~violation)


def suppress(warp: WarpResult, tau_d: float = 0.2) -> Tuple[WarpResult, OcclusionMask]:
    """Remove leaked background pixels from a warp.

    Works on the full-resolution pixels only: low-resolution fill neither
    counts towards the density nor feeds the dilation, and is never removed.
    Only pixels of reliable origin may be suppressed. The kernel density counts
    already-suppressed pixels as present, so a second application changes nothing.
    Meant for inference-time conditioning only.
    """
    high = warp.high_res
    present = high | warp.suppressed
    density = float(present.mean()) if present.size else 0.0
    k = kernel_from_density(density)

    d_dilate, dilate_valid = dilate_depth(warp.depth, high, k)
    mask = occlusion_mask(warp.depth, high, d_dilate, dilate_valid, tau_d)
    keep = mask.keep | ~warp.reliable_origin | ~high
    mask = OcclusionMask(keep=keep)

    removed = int((~keep).sum())
    logger.debug("Suppression: density %.4f, kernel %d, %d pixels removed", density, k, removed)
    if removed == 0:
        return warp, mask
    return warp.keep_only(keep), mask
