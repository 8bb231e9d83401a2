"""Candidate decoding: node ordering, bit reading, sub-pixel vertices, and
the full image -> detections pipeline.

Decoding works on node centroids.  The baseline node's two dots anchor the
grid orientation; the far end of the baseline row and the far end of the
first column fix a projective rectification, after which every node snaps to
its lattice cell.  Working in rectified coordinates keeps collinear nodes
collinear regardless of perspective, which is what makes the direction
searches reliable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .family import TagFamily, TagId, decode_bits
from .geometry import apply_homography, convex_hull
from .pose import DegenerateGeometryError, dlt_homography
from .regions import (
    Candidate,
    CandidateRejected,
    FilterParams,
    RegionTree,
    build_region_tree,
    correct_errors,
    filter_candidates,
    label_components,
    region_centroid,
    validate_node_count,
)
from .segment import SegmentationParams, binarize, estimate_threshold_map

# Rectified node positions must land within this fraction of a cell pitch of
# their lattice point; must stay < 0.5 to keep the cell assignment unambiguous.
LATTICE_TOLERANCE = 0.35


class DecodeFailure(CandidateRejected):
    """Candidate could not be decoded into a valid grid assignment."""


@dataclass
class DecodeParams:
    theta2: float = 0.1  # radians
    delta_floor: int = 2
    delta_divisor: int = 10

    def __post_init__(self) -> None:
        if self.theta2 <= 0:
            raise ValueError("theta2 must be positive")
        if self.delta_floor < 0 or self.delta_divisor < 1:
            raise ValueError("invalid dilation parameters")


@dataclass
class Detection:
    """One decoded marker."""

    family: TagFamily
    tag_id: TagId
    bits: np.ndarray
    vertices: np.ndarray  # (grid_n**2, 2) sub-pixel points, layout order
    homography: np.ndarray  # image pixels -> canonical grid (cell units)
    polygon: np.ndarray  # convex hull of the vertices
    root_region: int
    root_area: int

    def to_dict(self) -> dict:
        return {
            "family": self.family.name,
            "id": self.tag_id.value,
            "bits": "".join(str(int(b)) for b in self.bits),
            "vertices": [[float(x), float(y)] for x, y in self.vertices],
            "homography": [float(v) for v in self.homography.reshape(-1)],
            "polygon": [[float(x), float(y)] for x, y in self.polygon],
        }


@dataclass
class OrderedNodes:
    """Candidate nodes arranged on the canonical grid."""

    baseline_label: int
    dot_labels: tuple[int, int]  # p1 dot, p2 dot
    data_labels: tuple[int, ...]  # one label per family data cell, decode order
    centroids: np.ndarray  # (grid_n**2, 2) area centroids, layout order
    homography: np.ndarray  # image -> grid from the all-points fit


def find_baseline(tree: RegionTree, candidate: Candidate) -> tuple[np.ndarray, np.ndarray, int]:
    """Centroids of the two baseline dots (unordered) and the baseline label."""
    if candidate.baseline is None:
        raise ValueError("candidate must pass correct_errors first")
    baseline = candidate.baseline
    dots = candidate.node_dots[baseline]
    if dots.size != 2:
        raise ValueError("baseline node must contain exactly two dots")
    c1 = np.array(region_centroid(tree.table, int(dots[0])))
    c2 = np.array(region_centroid(tree.table, int(dots[1])))
    if np.allclose(c1, c2):
        raise DecodeFailure("coincident baseline dots")
    return c1, c2, baseline


def _within_cone(points: np.ndarray, origin: np.ndarray, direction: np.ndarray, tol: float) -> np.ndarray:
    """Mask of points within angular tolerance of the ray origin + s*direction."""
    v = points - origin
    norm_v = np.linalg.norm(v, axis=1)
    norm_d = np.linalg.norm(direction)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = (v @ direction) / (norm_v * norm_d)
    ang = np.arccos(np.clip(cosang, -1.0, 1.0))
    return (ang <= tol) & (norm_v > 0)


def _lattice_points(family: TagFamily) -> np.ndarray:
    """Canonical grid coordinates (x=col, y=row), layout order."""
    cells = list(family.baseline_cells) + list(family.data_cell_order)
    return np.array([(j, i) for i, j in cells], dtype=np.float64)


def order_vertices(
    tree: RegionTree,
    candidate: Candidate,
    family: TagFamily,
    params: DecodeParams | None = None,
) -> OrderedNodes:
    """Assign candidate nodes to canonical grid cells.

    Steps: orient the baseline so the rest of its row lies beyond the second
    dot; anchor the rectification on the two dots, the far end of the row,
    and the far end of the first column; map every node centroid into grid
    coordinates and round to the nearest cell.  The assignment must be a
    bijection onto the data cells, re-validated after a second homography fit
    through all matched nodes.
    """
    params = params or DecodeParams()
    n = family.grid_n
    if candidate.black_nodes.size != n * n - 1:
        raise DecodeFailure(
            f"{candidate.black_nodes.size} nodes cannot fill a {n}x{n} grid"
        )
    d1, d2, baseline = find_baseline(tree, candidate)
    data_nodes = np.array(
        [b for b in candidate.black_nodes if int(b) != baseline], dtype=np.int64
    )
    centroids = np.array(
        [region_centroid(tree.table, int(b)) for b in data_nodes]
    )

    # orientation: the baseline row continues beyond p2, away from p1
    counts = []
    for a, b in ((d1, d2), (d2, d1)):
        counts.append(int(_within_cone(centroids, b, b - a, params.theta2).sum()))
    if counts[0] == counts[1]:
        raise DecodeFailure("ambiguous baseline direction")
    p1, p2 = (d1, d2) if counts[0] > counts[1] else (d2, d1)
    direction = p2 - p1

    # the rest of the baseline row: collinear with the dots under any
    # perspective, ending at the row's far corner
    in_row = _within_cone(centroids, p2, direction, params.theta2)
    dist_p1 = np.linalg.norm(centroids - p1, axis=1)
    if int(in_row.sum()) != n - 2:
        raise DecodeFailure(
            f"{int(in_row.sum())} nodes along the baseline direction, expected {n - 2}"
        )
    row_idx = np.flatnonzero(in_row)
    row_sorted = row_idx[np.argsort(dist_p1[row_idx])]

    # the orthogonal grid axis: widest angle off the baseline ray seen from
    # the first dot, then every node along that direction ordered by distance
    rest = np.ones(len(data_nodes), dtype=bool)
    rest[row_idx] = False
    v = centroids - p1
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = (v @ direction) / (np.linalg.norm(v, axis=1) * np.linalg.norm(direction))
    ang = np.arccos(np.clip(cosang, -1.0, 1.0))
    ang[~rest] = -1.0
    widest = int(np.argmax(ang))
    along = _within_cone(centroids, p1, centroids[widest] - p1, params.theta2) & rest
    if int(along.sum()) != n - 1:
        raise DecodeFailure(
            f"{int(along.sum())} nodes along the orthogonal axis, expected {n - 1}"
        )
    col_idx = np.flatnonzero(along)
    col_sorted = col_idx[np.argsort(dist_p1[col_idx])]

    # Rectify from the identified row and column.  Four points alone would be
    # degenerate here (the two dots and the row nodes are collinear), but the
    # row and column lie on two distinct lines, which pins the homography.
    anchors_img = np.vstack([p1, p2, centroids[row_sorted], centroids[col_sorted]])
    anchors_grid = np.array(
        [[0.0, 0.0], [1.0, 0.0]]
        + [[float(j), 0.0] for j in range(2, n)]
        + [[0.0, float(i)] for i in range(1, n)]
    )
    try:
        h = dlt_homography(anchors_img, anchors_grid)
    except DegenerateGeometryError as exc:
        raise DecodeFailure(f"rectification anchors degenerate: {exc}") from exc

    lattice = _lattice_points(family)
    data_cells = {tuple(c): k for k, c in enumerate(family.data_cell_order)}

    def assign(hmat: np.ndarray) -> list[int]:
        grid = apply_homography(hmat, centroids)
        cells = np.rint(grid).astype(int)
        slots: list[int | None] = [None] * len(family.data_cell_order)
        for idx, (gx, gy) in enumerate(cells):
            key = (int(gy), int(gx))  # cells are (row, col)
            slot = data_cells.get(key)
            if slot is None or slots[slot] is not None:
                raise DecodeFailure("node assignment is not a bijection onto data cells")
            slots[slot] = idx
        return [s for s in slots if s is not None]

    slots = assign(h)

    # second pass: re-fit the homography through every matched node and
    # re-validate with the tight lattice tolerance
    img_pts = np.vstack([p1, p2, centroids[slots]])
    try:
        h = dlt_homography(img_pts, lattice)
    except DegenerateGeometryError as exc:
        raise DecodeFailure(f"grid fit degenerate: {exc}") from exc
    slots = assign(h)
    residual = np.linalg.norm(
        apply_homography(h, np.vstack([p1, p2, centroids[slots]])) - lattice, axis=1
    )
    if np.any(residual > LATTICE_TOLERANCE):
        raise DecodeFailure(
            f"grid residual {residual.max():.3f} exceeds {LATTICE_TOLERANCE}"
        )

    dots = candidate.node_dots[baseline]
    c_first = np.array(region_centroid(tree.table, int(dots[0])))
    dot_labels = (
        (int(dots[0]), int(dots[1]))
        if np.allclose(c_first, p1)
        else (int(dots[1]), int(dots[0]))
    )
    return OrderedNodes(
        baseline_label=baseline,
        dot_labels=dot_labels,
        data_labels=tuple(int(data_nodes[s]) for s in slots),
        centroids=np.vstack([p1, p2, centroids[slots]]),
        homography=h,
    )


def read_bits(candidate: Candidate, ordered: OrderedNodes) -> np.ndarray:
    """Bit k = 1 iff the node on data cell k contains at least one white dot."""
    return np.array(
        [1 if candidate.node_dots[lab].size > 0 else 0 for lab in ordered.data_labels],
        dtype=np.uint8,
    )


def _moment_vertex(
    img: np.ndarray,
    tree: RegionTree,
    label: int,
    invert: bool,
    params: DecodeParams,
) -> np.ndarray:
    """Intensity-weighted centroid over the region's dilated support.

    Dark features (black nodes) are weighted by inverted intensity so the
    feature mass, not the background, drives the centroid.
    """
    table = tree.table
    x0, y0, x1, y1 = (int(v) for v in table.bbox[label])
    short = min(x1 - x0 + 1, y1 - y0 + 1)
    delta = max(params.delta_floor, short // params.delta_divisor)

    h, w = table.labels.shape
    cx0 = max(x0 - delta, 0)
    cy0 = max(y0 - delta, 0)
    cx1 = min(x1 + delta, w - 1)
    cy1 = min(y1 + delta, h - 1)
    mask = table.labels[cy0 : cy1 + 1, cx0 : cx1 + 1] == label
    if delta > 0:
        mask = ndimage.maximum_filter(
            mask.astype(np.uint8), size=2 * delta + 1, mode="constant", cval=0
        ).astype(bool)
    crop = img[cy0 : cy1 + 1, cx0 : cx1 + 1].astype(np.float64)
    weights = (255.0 - crop) if invert else crop
    weights = np.where(mask, weights, 0.0)
    m00 = weights.sum()
    if m00 <= 0:
        raise DecodeFailure(f"degenerate support for region {label}")
    ys, xs = np.mgrid[cy0 : cy1 + 1, cx0 : cx1 + 1]
    return np.array([(xs * weights).sum() / m00, (ys * weights).sum() / m00])


def estimate_vertices(
    img: np.ndarray,
    tree: RegionTree,
    candidate: Candidate,
    ordered: OrderedNodes,
    params: DecodeParams | None = None,
) -> np.ndarray:
    """Sub-pixel vertices for all grid nodes: the two baseline dots first,
    then the data-cell nodes in decode order."""
    params = params or DecodeParams()
    out = [
        _moment_vertex(img, tree, ordered.dot_labels[0], False, params),
        _moment_vertex(img, tree, ordered.dot_labels[1], False, params),
    ]
    for lab in ordered.data_labels:
        out.append(_moment_vertex(img, tree, lab, True, params))
    return np.array(out)


def decode_candidate(
    img: np.ndarray,
    tree: RegionTree,
    candidate: Candidate,
    family: TagFamily,
    filter_params: FilterParams,
    decode_params: DecodeParams,
) -> Detection:
    """Run correction, ordering, bit reading, and vertex estimation on one
    candidate; raises :class:`CandidateRejected` subclasses on failure."""
    corrected = validate_node_count(
        correct_errors(tree, candidate, filter_params), family
    )
    ordered = order_vertices(tree, corrected, family, decode_params)
    bits = read_bits(corrected, ordered)
    tag_id = decode_bits(family, bits)
    vertices = estimate_vertices(img, tree, corrected, ordered, decode_params)

    # re-fit the rectification on the refined vertices and re-check the gate
    lattice = _lattice_points(family)
    try:
        h = dlt_homography(vertices, lattice)
    except DegenerateGeometryError as exc:
        raise DecodeFailure(f"vertex grid fit degenerate: {exc}") from exc
    residual = np.linalg.norm(apply_homography(h, vertices) - lattice, axis=1)
    if np.any(residual > LATTICE_TOLERANCE):
        raise DecodeFailure(
            f"refined grid residual {residual.max():.3f} exceeds {LATTICE_TOLERANCE}"
        )

    return Detection(
        family=family,
        tag_id=tag_id,
        bits=bits,
        vertices=vertices,
        homography=h,
        polygon=convex_hull(vertices),
        root_region=corrected.root_region,
        root_area=int(tree.table.area[corrected.root_region]),
    )


def detect(
    img: np.ndarray,
    families: Sequence[TagFamily] | TagFamily,
    seg_params: SegmentationParams | None = None,
    filter_params: FilterParams | None = None,
    decode_params: DecodeParams | None = None,
    diagnostics: list | None = None,
) -> list[Detection]:
    """Detect and decode every marker in a grayscale image.

    Never raises on valid images: candidates that fail correction or decoding
    are dropped (and reported through ``diagnostics`` when given as a list).
    Detections come back ordered by interior area, largest first.
    """
    if isinstance(families, TagFamily):
        families = [families]
    seg_params = seg_params or SegmentationParams()
    filter_params = filter_params or FilterParams()
    decode_params = decode_params or DecodeParams()

    threshold = estimate_threshold_map(img, seg_params)
    binary = binarize(img, threshold, seg_params.beta)
    table = label_components(binary)
    tree = build_region_tree(table)

    detections: list[Detection] = []
    for family in families:
        for candidate in filter_candidates(tree, family, filter_params):
            try:
                detections.append(
                    decode_candidate(
                        img, tree, candidate, family, filter_params, decode_params
                    )
                )
            except CandidateRejected as exc:
                if diagnostics is not None:
                    diagnostics.append(
                        {
                            "family": family.name,
                            "root_region": candidate.root_region,
                            "reason": f"{type(exc).__name__}: {exc}",
                        }
                    )
    detections.sort(key=lambda d: (-d.root_area, d.root_region, d.family.grid_n))
    return detections
