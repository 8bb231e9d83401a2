"""Raster primitives shared by every pipeline stage.

Conventions used throughout the package:

* grayscale image: 2-D ``uint8`` array, shape ``(height, width)``, row-major;
* binary image: 2-D ``bool`` array, ``True`` = white/foreground;
* float map: 2-D ``float64`` array with finite samples;
* the origin is the top-left pixel, x grows rightward (columns), y downward
  (rows), and sub-pixel coordinates refer to pixel centers, so the center of
  pixel ``(row, col)`` is the point ``(x=col, y=row)``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage


class DegenerateSupportError(ValueError):
    """Raised when a centroid is requested over a support with zero mass."""


def _check_image(arr: np.ndarray, name: str = "image") -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    return arr


def downsample_mean(img: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean downsampling by an integer factor.

    Output dimensions are ``ceil(input / factor)``; trailing partial blocks at
    the right/bottom edges are averaged over the pixels they actually cover,
    so the result always spans the full input frame.
    """
    img = _check_image(img)
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"downsampling factor must be >= 1, got {factor}")
    data = img.astype(np.float64, copy=False)
    if factor == 1:
        return data.copy()
    h, w = data.shape
    row_idx = np.arange(0, h, factor)
    col_idx = np.arange(0, w, factor)
    sums = np.add.reduceat(np.add.reduceat(data, row_idx, axis=0), col_idx, axis=1)
    row_n = np.minimum(row_idx + factor, h) - row_idx
    col_n = np.minimum(col_idx + factor, w) - col_idx
    return sums / np.outer(row_n, col_n)


def upsample_bilinear(map_: np.ndarray, factor: int, target_w: int, target_h: int) -> np.ndarray:
    """Bilinear upsampling with source samples anchored at block centers.

    Source sample ``(i, j)`` is treated as living at target coordinates
    ``((j + 0.5) * factor - 0.5, (i + 0.5) * factor - 0.5)`` so the upsampled
    map aligns spatially with the image the source was downsampled from.
    Samples outside the anchor lattice are clamp-extrapolated.
    """
    map_ = _check_image(map_, "map")
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {factor}")
    if target_w < 1 or target_h < 1:
        raise ValueError("target dimensions must be positive")
    src_h, src_w = map_.shape
    if abs(target_w - src_w * factor) > factor - 1 or abs(target_h - src_h * factor) > factor - 1:
        raise ValueError(
            f"target {target_w}x{target_h} inconsistent with source "
            f"{src_w}x{src_h} at factor {factor}"
        )
    data = map_.astype(np.float64, copy=False)
    if factor == 1 and (target_w, target_h) == (src_w, src_h):
        return data.copy()

    def axis_coords(n_target: int, n_src: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        u = (np.arange(n_target) + 0.5) / factor - 0.5
        u = np.clip(u, 0.0, n_src - 1.0)
        i0 = np.floor(u).astype(np.intp)
        i0 = np.minimum(i0, n_src - 2) if n_src > 1 else np.zeros_like(i0)
        w1 = u - i0 if n_src > 1 else np.zeros_like(u)
        return i0, i0 + (1 if n_src > 1 else 0), w1

    r0, r1, wy = axis_coords(target_h, src_h)
    c0, c1, wx = axis_coords(target_w, src_w)
    top = data[r0][:, c0] * (1.0 - wx) + data[r0][:, c1] * wx
    bot = data[r1][:, c0] * (1.0 - wx) + data[r1][:, c1] * wx
    return top * (1.0 - wy[:, None]) + bot * wy[:, None]


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Sampled 1-D Gaussian of odd length ``size``, normalized to sum 1."""
    size = int(size)
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 1, got {size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, kernel: int, sigma_x: float, sigma_y: float) -> np.ndarray:
    """Separable Gaussian blur with edge replication, returned as uint8."""
    img = _check_image(img)
    kx = gaussian_kernel(kernel, sigma_x)
    ky = gaussian_kernel(kernel, sigma_y)
    data = img.astype(np.float64, copy=False)
    if kernel > 1:
        data = ndimage.convolve1d(data, ky, axis=0, mode="nearest")
        data = ndimage.convolve1d(data, kx, axis=1, mode="nearest")
    return np.clip(np.rint(data), 0, 255).astype(np.uint8)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological dilation with a square element of side ``2*radius + 1``."""
    mask = _check_image(mask, "mask")
    radius = int(radius)
    if radius < 1:
        raise ValueError(f"dilation radius must be >= 1, got {radius}")
    out = ndimage.maximum_filter(
        mask.astype(np.uint8, copy=False), size=2 * radius + 1, mode="constant", cval=0
    )
    return out.astype(bool)


def centroid_moments(img: np.ndarray, support: np.ndarray) -> tuple[float, float]:
    """Intensity-weighted centroid of ``img`` over a boolean support mask.

    Uses the raw (not binarized) intensities: with moments
    ``M00 = sum(I)``, ``M10 = sum(x * I)``, ``M01 = sum(y * I)`` over the
    support pixels, the centroid is ``(M10 / M00, M01 / M00)`` in pixel-center
    coordinates.
    """
    img = _check_image(img)
    support = _check_image(support, "support")
    if img.shape != support.shape:
        raise ValueError(f"image {img.shape} and support {support.shape} differ in shape")
    ys, xs = np.nonzero(support)
    if ys.size == 0:
        raise DegenerateSupportError("support mask is empty")
    vals = img[ys, xs].astype(np.float64)
    m00 = vals.sum()
    if m00 <= 0.0:
        raise DegenerateSupportError("support has zero total intensity")
    return float((xs * vals).sum() / m00), float((ys * vals).sum() / m00)


# ---------------------------------------------------------------------------
# Image file I/O
# ---------------------------------------------------------------------------

_LUMA = np.array([0.299, 0.587, 0.114])


def rgb_to_gray(rgb: np.ndarray) -> np.ndarray:
    """Convert an (h, w, 3) color array to 8-bit luma."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] < 3:
        raise ValueError(f"expected (h, w, 3) color array, got shape {rgb.shape}")
    luma = np.rint(rgb[..., :3].astype(np.float64) @ _LUMA)
    return np.clip(luma, 0, 255).astype(np.uint8)


def read_gray(path: str | Path) -> np.ndarray:
    """Read a PNG or PGM file as an 8-bit grayscale image.

    Color inputs are converted via ``luma = round(0.299 R + 0.587 G + 0.114 B)``.
    """
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return _read_pgm(path)
    from PIL import Image

    with Image.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.uint8).copy()
        if im.mode in ("1", "I", "I;16", "F", "LA"):
            return np.asarray(im.convert("L"), dtype=np.uint8).copy()
        return rgb_to_gray(np.asarray(im.convert("RGB")))


def write_gray(path: str | Path, img: np.ndarray) -> None:
    """Write an 8-bit grayscale image as PNG or binary (P5) PGM by extension."""
    img = _check_image(img)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img.astype(np.float64)), 0, 255).astype(np.uint8)
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        _write_pgm(path, img)
        return
    from PIL import Image

    Image.fromarray(img, mode="L").save(path)


def _read_pgm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary (P5) PGM file")
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed; pixel data follows the single whitespace
    # after maxval.
    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(int(raw[start:pos]))
    pos += 1  # single whitespace separating header from data
    width, height, maxval = tokens
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    data = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos)
    return data.reshape(height, width).copy()


def _write_pgm(path: Path, img: np.ndarray) -> None:
    h, w = img.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    path.write_bytes(header + np.ascontiguousarray(img).tobytes())
