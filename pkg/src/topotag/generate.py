"""Marker rasterization: id -> grayscale image, plus SVG export.

Canonical orientation: black external border, white interior, one elongated
black baseline blob spanning the two baseline cells (with two white dots at
the cell centers), and one black node per data cell that carries a white dot
iff its bit is 1.  Geometry is expressed in cell units; the canvas is
``grid_n + 2 * border_cells`` cells on a side, where the border allowance is
split 2:1 between the black border and the outer white quiet zone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .family import CanonicalLayout, TagFamily, TagId, encode_id

# Node side/diameter as a fraction of the cell pitch.  Large enough that the
# smallest node stays well above the error-correction area cutoff, small
# enough that adjacent nodes never fuse at 8 px/cell under anti-aliasing.
NODE_FRACTION = 0.80
# Baseline connecting bar height as a fraction of the node size.
BAR_FRACTION = 0.5

NODE_SHAPES = ("square", "circle", "hexagon")
EXTERNAL_SHAPES = ("square", "custom-mask")


@dataclass
class RenderOptions:
    """Rasterization parameters for :func:`render_tag`."""

    pixels_per_cell: int = 16
    node_shape: str = "square"
    external_shape: str = "square"
    dot_fraction: float = 0.5
    border_cells: float = 1.5
    supersampling: int = 4
    external_mask: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.node_shape not in NODE_SHAPES:
            raise ValueError(f"unknown node shape {self.node_shape!r}")
        if self.external_shape not in EXTERNAL_SHAPES:
            raise ValueError(f"unknown external shape {self.external_shape!r}")
        if not 0.0 < self.dot_fraction < 1.0:
            raise ValueError("dot_fraction must be in (0, 1)")
        if self.border_cells < 0:
            raise ValueError("border_cells must be >= 0")
        if self.supersampling < 1:
            raise ValueError("supersampling must be >= 1")
        if self.external_shape == "custom-mask" and self.external_mask is None:
            raise ValueError("external_shape 'custom-mask' requires external_mask")

    @property
    def quiet_cells(self) -> float:
        return self.border_cells / 3.0

    @property
    def black_border_cells(self) -> float:
        return 2.0 * self.border_cells / 3.0

    def canvas_cells(self, grid_n: int) -> float:
        return grid_n + 2.0 * self.border_cells

    def canvas_pixels(self, grid_n: int) -> int:
        return int(round(self.canvas_cells(grid_n) * self.pixels_per_cell))


class ResolutionTooLowError(ValueError):
    """Raised when pixels_per_cell is too small for dots to survive."""


class _Raster:
    """Boolean 'ink' canvas at supersampled resolution; True = black."""

    def __init__(self, size_px: int, ss: int):
        self.n = size_px * ss
        self.ss = ss
        self.ink = np.zeros((self.n, self.n), dtype=bool)

    def _span(self, lo: float, hi: float) -> tuple[int, int]:
        # sample k sits at (k + 0.5) / ss; select centers in [lo, hi)
        k0 = int(np.ceil(lo * self.ss - 0.5))
        k1 = int(np.ceil(hi * self.ss - 0.5))
        return max(k0, 0), min(k1, self.n)

    def rect(self, x0: float, y0: float, x1: float, y1: float, black: bool) -> None:
        c0, c1 = self._span(x0, x1)
        r0, r1 = self._span(y0, y1)
        self.ink[r0:r1, c0:c1] = black

    def _window(self, cx: float, cy: float, r: float):
        c0, c1 = self._span(cx - r, cx + r)
        r0, r1 = self._span(cy - r, cy + r)
        xs = (np.arange(c0, c1) + 0.5) / self.ss - cx
        ys = (np.arange(r0, r1) + 0.5) / self.ss - cy
        return (slice(r0, r1), slice(c0, c1)), xs[None, :], ys[:, None]

    def circle(self, cx: float, cy: float, radius: float, black: bool) -> None:
        win, xs, ys = self._window(cx, cy, radius)
        self.ink[win][xs**2 + ys**2 <= radius**2] = black

    def hexagon(self, cx: float, cy: float, radius: float, black: bool) -> None:
        # flat-top regular hexagon with circumradius `radius`
        win, xs, ys = self._window(cx, cy, radius)
        s3 = np.sqrt(3.0)
        inside = (np.abs(ys) <= s3 / 2.0 * radius) & (
            s3 * np.abs(xs) + np.abs(ys) <= s3 * radius
        )
        self.ink[win][inside] = black

    def shape(self, kind: str, cx: float, cy: float, size: float, black: bool) -> None:
        if kind == "square":
            self.rect(cx - size / 2, cy - size / 2, cx + size / 2, cy + size / 2, black)
        elif kind == "circle":
            self.circle(cx, cy, size / 2, black)
        else:
            self.hexagon(cx, cy, size / 2, black)

    def mask(self, external_mask: np.ndarray, black: bool) -> None:
        # nearest-neighbor stretch of the user mask over the full canvas
        m = np.asarray(external_mask, dtype=bool)
        rows = np.minimum((np.arange(self.n) * m.shape[0]) // self.n, m.shape[0] - 1)
        cols = np.minimum((np.arange(self.n) * m.shape[1]) // self.n, m.shape[1] - 1)
        sel = m[rows[:, None], cols[None, :]]
        self.ink[sel] = black

    def to_gray(self) -> np.ndarray:
        ss = self.ss
        n_out = self.n // ss
        cover = self.ink.reshape(n_out, ss, n_out, ss).mean(axis=(1, 3))
        return np.clip(np.rint(255.0 * (1.0 - cover)), 0, 255).astype(np.uint8)


def _cell_centers(family: TagFamily, opts: RenderOptions) -> np.ndarray:
    """Corner-convention canvas coordinates of all grid cell centers,
    ordered as CanonicalLayout (baseline pair, then data cells)."""
    ppc = opts.pixels_per_cell
    b = opts.border_cells
    cells = list(family.baseline_cells) + list(family.data_cell_order)
    return np.array([((b + j + 0.5) * ppc, (b + i + 0.5) * ppc) for i, j in cells])


def render_tag(tag_id: TagId, opts: RenderOptions | None = None) -> np.ndarray:
    """Rasterize a marker to an 8-bit grayscale image in canonical orientation."""
    opts = opts or RenderOptions()
    if opts.pixels_per_cell < 8:
        raise ResolutionTooLowError(
            f"pixels_per_cell must be >= 8, got {opts.pixels_per_cell}"
        )
    family = tag_id.family
    bits = encode_id(tag_id)
    ppc = opts.pixels_per_cell
    size_px = opts.canvas_pixels(family.grid_n)
    canvas = _Raster(size_px, opts.supersampling)

    span = opts.canvas_cells(family.grid_n) * ppc
    quiet = opts.quiet_cells * ppc
    inner = opts.border_cells * ppc
    if opts.external_shape == "square":
        canvas.rect(quiet, quiet, span - quiet, span - quiet, True)
    else:
        canvas.mask(opts.external_mask, True)
    canvas.rect(inner, inner, span - inner, span - inner, False)

    centers = _cell_centers(family, opts)
    node = NODE_FRACTION * ppc
    dot = opts.dot_fraction * ppc

    # baseline blob: two node shapes joined by a bar, then its two dots
    (x1, y1), (x2, y2) = centers[0], centers[1]
    canvas.shape(opts.node_shape, x1, y1, node, True)
    canvas.shape(opts.node_shape, x2, y2, node, True)
    bar = BAR_FRACTION * node
    canvas.rect(min(x1, x2), y1 - bar / 2, max(x1, x2), y1 + bar / 2, True)
    canvas.shape(opts.node_shape, x1, y1, dot, False)
    canvas.shape(opts.node_shape, x2, y2, dot, False)

    for k, (cx, cy) in enumerate(centers[2:]):
        canvas.shape(opts.node_shape, cx, cy, node, True)
        if bits[k]:
            canvas.shape(opts.node_shape, cx, cy, dot, False)

    return canvas.to_gray()


def render_model_points(tag_id: TagId, opts: RenderOptions | None = None) -> np.ndarray:
    """Pixel-center coordinates of the grid node centers in the rendered image,
    ordered as CanonicalLayout (two baseline dots first, then data cells)."""
    opts = opts or RenderOptions()
    if opts.pixels_per_cell < 8:
        raise ResolutionTooLowError(
            f"pixels_per_cell must be >= 8, got {opts.pixels_per_cell}"
        )
    return _cell_centers(tag_id.family, opts) - 0.5


def marker_plane_transform(
    family: TagFamily, opts: RenderOptions, layout: CanonicalLayout
) -> np.ndarray:
    """Affine 3x3 mapping rendered pixel-center coordinates to marker-plane meters.

    The rendered canvas is similar to the physical tag; the black outer border
    square of the raster corresponds to ``layout.tag_size`` meters.
    """
    ppc = opts.pixels_per_cell
    meters_per_px = layout.cell_pitch / ppc
    half = opts.canvas_cells(family.grid_n) * ppc / 2.0
    # pixel-center coordinate u maps to (u + 0.5 - half) * scale
    t = np.array(
        [
            [meters_per_px, 0.0, (0.5 - half) * meters_per_px],
            [0.0, meters_per_px, (0.5 - half) * meters_per_px],
            [0.0, 0.0, 1.0],
        ]
    )
    return t


def svg_tag(tag_id: TagId, opts: RenderOptions | None = None) -> str:
    """Exact-geometry SVG rendering (shape primitives, no raster)."""
    opts = opts or RenderOptions()
    family = tag_id.family
    bits = encode_id(tag_id)
    ppc = opts.pixels_per_cell
    span = opts.canvas_cells(family.grid_n) * ppc
    quiet = opts.quiet_cells * ppc
    inner = opts.border_cells * ppc
    node = NODE_FRACTION * ppc
    dot = opts.dot_fraction * ppc
    centers = _cell_centers(family, opts)

    def shape_el(cx: float, cy: float, size: float, fill: str) -> str:
        if opts.node_shape == "square":
            return (
                f'<rect x="{cx - size / 2:.4f}" y="{cy - size / 2:.4f}" '
                f'width="{size:.4f}" height="{size:.4f}" fill="{fill}"/>'
            )
        if opts.node_shape == "circle":
            return f'<circle cx="{cx:.4f}" cy="{cy:.4f}" r="{size / 2:.4f}" fill="{fill}"/>'
        r = size / 2
        s3 = np.sqrt(3.0)
        verts = [
            (cx + r, cy),
            (cx + r / 2, cy + s3 * r / 2),
            (cx - r / 2, cy + s3 * r / 2),
            (cx - r, cy),
            (cx - r / 2, cy - s3 * r / 2),
            (cx + r / 2, cy - s3 * r / 2),
        ]
        pts = " ".join(f"{x:.4f},{y:.4f}" for x, y in verts)
        return f'<polygon points="{pts}" fill="{fill}"/>'

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{span:g}" height="{span:g}" '
        f'viewBox="0 0 {span:g} {span:g}">',
        f'<rect width="{span:g}" height="{span:g}" fill="white"/>',
        f'<rect x="{quiet:.4f}" y="{quiet:.4f}" width="{span - 2 * quiet:.4f}" '
        f'height="{span - 2 * quiet:.4f}" fill="black"/>',
        f'<rect x="{inner:.4f}" y="{inner:.4f}" width="{span - 2 * inner:.4f}" '
        f'height="{span - 2 * inner:.4f}" fill="white"/>',
    ]
    (x1, y1), (x2, y2) = centers[0], centers[1]
    bar = BAR_FRACTION * node
    parts.append(shape_el(x1, y1, node, "black"))
    parts.append(shape_el(x2, y2, node, "black"))
    parts.append(
        f'<rect x="{min(x1, x2):.4f}" y="{y1 - bar / 2:.4f}" '
        f'width="{abs(x2 - x1):.4f}" height="{bar:.4f}" fill="black"/>'
    )
    parts.append(shape_el(x1, y1, dot, "white"))
    parts.append(shape_el(x2, y2, dot, "white"))
    for k, (cx, cy) in enumerate(centers[2:]):
        parts.append(shape_el(cx, cy, node, "black"))
        if bits[k]:
            parts.append(shape_el(cx, cy, dot, "white"))
    parts.append("</svg>")
    return "\n".join(parts)
