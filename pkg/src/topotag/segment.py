"""Adaptive threshold-map estimation and binarization.

The threshold map is built on a downsampled image to suppress noise and cost:
downsample by ``s1`` (block mean), clamp dark samples up to ``alpha``, box
average over a ``w`` window, downsample again by ``s2``, then upsample the
small map back to full resolution bilinearly.  Binarization compares each
pixel against the map, with an absolute minimum brightness ``beta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .image import downsample_mean, upsample_bilinear


@dataclass
class SegmentationParams:
    s1: int = 4
    s2: int = 8
    w: int = 5
    alpha: float = 45.0
    beta: float = 50.0

    def __post_init__(self) -> None:
        if self.s1 < 1 or self.s2 < 1:
            raise ValueError("downsample factors must be >= 1")
        if self.w < 1 or self.w % 2 == 0:
            raise ValueError("window size must be odd and >= 1")
        if not (0 <= self.alpha <= 255 and 0 <= self.beta <= 255):
            raise ValueError("alpha and beta must be within [0, 255]")


class ImageTooSmallError(ValueError):
    """Image smaller than one s1*s2 block; no threshold map can be built."""


def estimate_threshold_map(img: np.ndarray, params: SegmentationParams | None = None) -> np.ndarray:
    """Per-pixel adaptive threshold map for `img`.

    Every output sample is >= ``alpha`` and the map has the image's dimensions.
    """
    params = params or SegmentationParams()
    img = np.asarray(img)
    h, w = img.shape
    block = params.s1 * params.s2
    if h < block or w < block:
        raise ImageTooSmallError(f"image {w}x{h} smaller than s1*s2 = {block}")

    small = downsample_mean(img, params.s1)
    np.maximum(small, params.alpha, out=small)
    if params.w > 1:
        small = ndimage.uniform_filter(small, size=params.w, mode="nearest")
    coarse = downsample_mean(small, params.s2)
    return upsample_bilinear(coarse, block, w, h)


def binarize(img: np.ndarray, threshold_map: np.ndarray, beta: float = 50.0) -> np.ndarray:
    """White iff intensity strictly exceeds the local threshold and is >= beta."""
    img = np.asarray(img)
    threshold_map = np.asarray(threshold_map)
    if img.shape != threshold_map.shape:
        raise ValueError(
            f"image {img.shape} and threshold map {threshold_map.shape} differ in shape"
        )
    intensity = img.astype(np.float64, copy=False)
    return (intensity > threshold_map) & (intensity >= beta)
