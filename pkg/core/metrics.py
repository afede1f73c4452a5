"""
Image quality metrics and the confidence-weighted supervision loss.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from core.errors import InputError, ShapeMismatch, TooSmall
from core.geometry import Pose

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
MIN_BASELINE = 1e-9


@dataclass(frozen=True, eq=False)
class ConfidenceWeights:
    w_image: float
    w_pixel: np.ndarray
    lam: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.w_image <= 1.0:
            raise InputError(f"w_image must lie in [0, 1], got {self.w_image}")
        if not 0.0 <= self.lam <= 1.0:
            raise InputError(f"lambda must lie in [0, 1], got {self.lam}")
        w_pixel = np.asarray(self.w_pixel, dtype=np.float64)
        if w_pixel.size and (w_pixel.min() < 0.0 or w_pixel.max() > 1.0):
            raise InputError("w_pixel must lie in [0, 1]")
        object.__setattr__(self, "w_pixel", w_pixel)


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    # 11 taps: radius = truncate * sigma = 5
    blur = dict(sigma=SSIM_SIGMA, truncate=3.5, mode="reflect")
    mu_x = ndimage.gaussian_filter(x, **blur)
    mu_y = ndimage.gaussian_filter(y, **blur)
    var_x = ndimage.gaussian_filter(x * x, **blur) - mu_x ** 2
    var_y = ndimage.gaussian_filter(y * y, **blur) - mu_y ** 2
    cov = ndimage.gaussian_filter(x * y, **blur) - mu_x * mu_y

    ssim_map = ((2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2))
    pad = SSIM_WINDOW // 2
    return float(ssim_map[pad:-pad, pad:-pad].mean())


def ssim(a, b) -> float:
    """Mean SSIM over windows that fit inside the image, averaged over channels."""
    a, b = _check_pair(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise TooSmall(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[:2]}")
    if a.ndim == 2:
        return _ssim_channel(a, b)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c]) for c in range(a.shape[2])]))


def reference_baseline(ref_poses: Sequence[Pose]) -> float:
    """Largest distance between two reference camera centers."""
    centers = [pose.center for pose in ref_poses]
    return max((float(np.linalg.norm(p - q)) for p, q in itertools.combinations(centers, 2)), default=0.0)


def image_confidence(target_pose: Pose, ref_poses: Sequence[Pose]) -> float:
    """exp(-d_min / b): d_min to the nearest reference, b the reference baseline.

    With one reference b = d_min, so any offset gives exp(-1).
    """
    if not ref_poses:
        raise InputError("image_confidence needs at least one reference pose")
    d_min = min(float(np.linalg.norm(target_pose.center - pose.center)) for pose in ref_poses)
    if d_min == 0.0:
        return 1.0
    baseline = reference_baseline(ref_poses) if len(ref_poses) > 1 else d_min
    return math.exp(-d_min / max(baseline, MIN_BASELINE))


def weighted_loss(render, target, weights: ConfidenceWeights, valid: Optional[np.ndarray] = None) -> float:
    render, target = _check_pair(render, target)
    h, w = render.shape[:2]
    valid = np.ones((h, w), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if valid.shape != (h, w) or weights.w_pixel.shape != (h, w):
        raise ShapeMismatch(f"mask {valid.shape} and w_pixel {weights.w_pixel.shape} must match image {(h, w)}")

    l1 = 0.0
    if valid.any():
        residual = np.abs(render - target)
        if residual.ndim == 3:
            residual = residual.mean(axis=2)
        l1 = float((weights.w_pixel * residual)[valid].mean())
    structural = 1.0 - ssim(render, target) if weights.lam > 0 else 0.0
    return weights.w_image * ((1.0 - weights.lam) * l1 + weights.lam * structural)
