"""Camera gain estimation from phantom video and dark-frame statistics.

Gain estimation leans on the photon-count statistics: intensities are
K * Poisson(rate), so per pixel the temporal variance over the temporal
mean estimates K directly. Read noise is assumed negligible in the phantom
video, and the unbiased (n-1) variance is used so results are reproducible
bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .frameio import VideoSequence

MEAN_EPSILON = 1e-6


@dataclass
class GainEstimate:
    k_mean: float
    per_pixel_k: np.ndarray  # zero where a pixel was excluded
    roi_count: int

    @property
    def inv_k(self) -> float:
        return 1.0 / self.k_mean


def estimate_gain(video: VideoSequence, roi_mask: np.ndarray) -> GainEstimate:
    """Per active ROI pixel, K = temporal variance / temporal mean; pixels
    with mean below MEAN_EPSILON or zero variance are excluded, and the
    estimate averages the rest (pixel-weighted)."""
    if len(video) < 2:
        raise ValidationError("gain estimation needs at least 2 frames")
    mask = np.asarray(roi_mask)
    if mask.shape != video.frame_shape:
        raise ValidationError("roi mask shape does not match the video frames")
    mask = mask > 0
    if not np.any(mask):
        raise ValidationError("empty ROI mask")

    data = video.data
    mean = data.mean(axis=0, dtype=np.float64)
    var = data.var(axis=0, ddof=1, dtype=np.float64)

    # variance at the float-rounding scale of the mean is indistinguishable
    # from a constant signal, so such pixels are excluded as degenerate
    usable = mask & (mean >= MEAN_EPSILON) & (var > (1e-9 * mean) ** 2)
    if not np.any(usable):
        raise ValidationError("degenerate: zero variance in every ROI pixel")

    per_pixel = np.zeros_like(mean)
    per_pixel[usable] = var[usable] / mean[usable]
    k_mean = float(per_pixel[usable].mean())
    return GainEstimate(k_mean=k_mean, per_pixel_k=per_pixel, roi_count=int(usable.sum()))


def roi_mask_from_rects(shape, rects) -> np.ndarray:
    """Build a {0,1} mask from [x, y, w, h] rectangles (the rois.json format)."""
    mask = np.zeros(shape, dtype=np.float64)
    for rect in rects:
        x, y, w, h = (int(v) for v in rect)
        if w <= 0 or h <= 0:
            raise ValidationError(f"degenerate ROI rectangle {rect}")
        mask[y : y + h, x : x + w] = 1.0
    return mask


@dataclass
class FlickerReport:
    per_frame_means: np.ndarray
    centers: tuple  # (low, high)
    assignments: np.ndarray  # 0 = low mode, 1 = high mode


def flicker_split(dark: VideoSequence, max_iter: int = 100) -> FlickerReport:
    """Two-means split of the per-frame mean series (Lloyd's algorithm,
    deterministic 25th/75th-percentile init, ties assigned to the low mode).
    Surfaces the bimodal flicker structure of real dark video."""
    if len(dark) < 4:
        raise ValidationError("flicker analysis needs at least 4 frames")
    means = dark.data.mean(axis=(1, 2), dtype=np.float64)
    lo = float(np.percentile(means, 25.0))
    hi = float(np.percentile(means, 75.0))
    assign = _nearest(means, lo, hi)
    for _ in range(max_iter):
        new_lo = float(means[assign == 0].mean()) if np.any(assign == 0) else lo
        new_hi = float(means[assign == 1].mean()) if np.any(assign == 1) else hi
        new_assign = _nearest(means, new_lo, new_hi)
        converged = np.array_equal(new_assign, assign)
        lo, hi, assign = new_lo, new_hi, new_assign
        if converged:
            break
    if lo > hi:
        lo, hi = hi, lo
        assign = 1 - assign
    return FlickerReport(per_frame_means=means, centers=(lo, hi), assignments=assign)


def _nearest(values, lo, hi):
    d_lo = np.abs(values - lo)
    d_hi = np.abs(values - hi)
    return (d_hi < d_lo).astype(np.int64)  # ties go to the low mode


def read_noise_stats(dark: VideoSequence):
    """Temporal per-pixel mean and sample (n-1) standard deviation."""
    if len(dark) < 2:
        raise ValidationError("read-noise statistics need at least 2 frames")
    mean = dark.data.mean(axis=0, dtype=np.float64)
    std = dark.data.std(axis=0, ddof=1, dtype=np.float64)
    return {"per_pixel_mean": mean, "per_pixel_std": std}
