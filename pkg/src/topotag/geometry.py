"""Small planar-geometry helpers: convex hulls, clipping, areas."""

from __future__ import annotations

import numpy as np


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Convex hull via Andrew's monotone chain; vertices in CCW order
    (in the image convention with y down this is clockwise on screen)."""
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if pts.shape[0] <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def half(seq):
        out: list[np.ndarray] = []
        for p in seq:
            while len(out) >= 2 and np.cross(out[-1] - out[-2], p - out[-2]) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def polygon_area(poly: np.ndarray) -> float:
    """Absolute shoelace area of a simple polygon."""
    poly = np.asarray(poly, dtype=np.float64)
    if poly.shape[0] < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)


def clip_convex(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of a polygon by a convex clipper.

    Both polygons are given as vertex lists; the clipper must be convex and
    consistently oriented.  Returns the (possibly empty) intersection.
    """
    subject = np.asarray(subject, dtype=np.float64)
    clipper = np.asarray(clipper, dtype=np.float64)
    if subject.shape[0] < 3 or clipper.shape[0] < 3:
        return np.empty((0, 2))
    # ensure CCW clipper so "inside" is a consistent sign
    if _signed_area(clipper) < 0:
        clipper = clipper[::-1]
    output = [tuple(p) for p in subject]
    for i in range(clipper.shape[0]):
        a = clipper[i]
        b = clipper[(i + 1) % clipper.shape[0]]
        edge = b - a
        if not output:
            break
        inp = output
        output = []
        for j, cur in enumerate(inp):
            prev = inp[j - 1]
            cur_in = np.cross(edge, np.asarray(cur) - a) >= 0
            prev_in = np.cross(edge, np.asarray(prev) - a) >= 0
            if cur_in:
                if not prev_in:
                    output.append(_intersect(prev, cur, a, b))
                output.append(cur)
            elif prev_in:
                output.append(_intersect(prev, cur, a, b))
    return np.asarray(output).reshape(-1, 2)


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return float((np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)


def _intersect(p, q, a, b) -> tuple[float, float]:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    d1 = q - p
    d2 = b - a
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(denom) < 1e-15:
        return tuple(q)
    t = ((a[0] - p[0]) * d2[1] - (a[1] - p[1]) * d2[0]) / denom
    return (p[0] + t * d1[0], p[1] + t * d1[1])


def apply_homography(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply a 3x3 projective transform to (N, 2) points."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    ones = np.ones((pts.shape[0], 1))
    mapped = np.hstack([pts, ones]) @ np.asarray(h, dtype=np.float64).T
    return mapped[:, :2] / mapped[:, 2:3]
