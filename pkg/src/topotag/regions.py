"""Connected components, the region containment tree, and candidate filtering.

White regions are labeled with 4-connectivity and black regions with
8-connectivity; the complementary pair keeps containment well defined (no
crossing paradox), so every region nests inside exactly one opposite-color
region, or reaches the frame border and attaches to a virtual root.

A marker candidate is a white region whose subtree has depth exactly 3
(white root -> black nodes -> white dots) and a descendant count inside the
family's expected ``[zeta_min - tau, zeta_max + tau]`` band.  Error correction
then drops implausibly small nodes/dots relative to the baseline node.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .family import TagFamily, expected_tree_counts

_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.uint8)
_STRUCT_8 = np.ones((3, 3), dtype=np.uint8)

VIRTUAL_ROOT = -1


class CandidateRejected(Exception):
    """A candidate failed structural validation and is dropped."""


class NoBaselineError(CandidateRejected):
    """No unique black child with exactly two white dots."""


class StructureMismatchError(CandidateRejected):
    """Node count after error correction does not match the family grid."""


@dataclass(frozen=True)
class Region:
    """Row view of one region, mainly for debugging and dumps."""

    label: int
    color: str  # "white" | "black"
    area: int
    bbox: tuple[int, int, int, int]  # min_x, min_y, max_x, max_y (inclusive)
    seed_pixel: tuple[int, int]  # (x, y) of the raster-first pixel
    parent: int


@dataclass
class FilterParams:
    tau: int = 0
    theta1: float = 30.0

    def __post_init__(self) -> None:
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if not 0.0 < self.theta1 < 100.0:
            raise ValueError("theta1 must be a percentage in (0, 100)")


class RegionTable:
    """Label map plus per-region stats (column arrays indexed by label)."""

    def __init__(
        self,
        labels: np.ndarray,
        is_white: np.ndarray,
        area: np.ndarray,
        bbox: np.ndarray,
        seed: np.ndarray,
    ):
        self.labels = labels
        self.is_white = is_white
        self.area = area
        self.bbox = bbox
        self.seed = seed

    @property
    def n_regions(self) -> int:
        return self.is_white.size

    def seed_xy(self, label: int) -> tuple[int, int]:
        w = self.labels.shape[1]
        s = int(self.seed[label])
        return s % w, s // w


def label_components(binary: np.ndarray) -> RegionTable:
    """Label all white (4-connected) and black (8-connected) regions.

    Labels are contiguous from 0; white regions come first.
    """
    binary = np.asarray(binary, dtype=bool)
    if binary.ndim != 2 or binary.size == 0:
        raise ValueError(f"expected non-empty 2-D binary image, got shape {binary.shape}")
    white_labels, n_white = ndimage.label(binary, structure=_STRUCT_4)
    black_labels, n_black = ndimage.label(~binary, structure=_STRUCT_8)
    labels = np.where(binary, white_labels - 1, n_white + black_labels - 1).astype(np.int32)

    n = n_white + n_black
    flat = labels.ravel()
    area = np.bincount(flat, minlength=n).astype(np.int64)

    # raster-first pixel per label from run starts (earliest start wins)
    change = np.empty(flat.size, dtype=bool)
    change[0] = True
    np.not_equal(flat[1:], flat[:-1], out=change[1:])
    starts = np.flatnonzero(change)
    seed = np.zeros(n, dtype=np.int64)
    seed[flat[starts[::-1]]] = starts[::-1]

    bbox = np.zeros((n, 4), dtype=np.int32)
    for lab, sl in enumerate(ndimage.find_objects(labels + 1)):
        if sl is None:
            continue
        bbox[lab] = (sl[1].start, sl[0].start, sl[1].stop - 1, sl[0].stop - 1)

    is_white = np.zeros(n, dtype=bool)
    is_white[:n_white] = True
    return RegionTable(labels, is_white, area, bbox, seed)


class RegionTree:
    """Containment forest over a RegionTable (virtual root = -1)."""

    def __init__(self, table: RegionTable, parent: np.ndarray):
        self.table = table
        self.parent = parent
        # CSR-style children index
        order = np.argsort(parent, kind="stable").astype(np.int64)
        self._child_order = order
        self._parent_sorted = parent[order]

    @property
    def labels(self) -> np.ndarray:
        return self.table.labels

    def children(self, label: int) -> np.ndarray:
        lo = np.searchsorted(self._parent_sorted, label, side="left")
        hi = np.searchsorted(self._parent_sorted, label, side="right")
        return self._child_order[lo:hi]

    def region(self, label: int) -> Region:
        t = self.table
        return Region(
            label=label,
            color="white" if t.is_white[label] else "black",
            area=int(t.area[label]),
            bbox=tuple(int(v) for v in t.bbox[label]),
            seed_pixel=t.seed_xy(label),
            parent=int(self.parent[label]),
        )

    def subtree_depth(self, label: int) -> int:
        """Number of levels in the subtree rooted at `label` (root counts as 1)."""
        depth = 0
        frontier = np.array([label], dtype=np.int64)
        while frontier.size:
            depth += 1
            frontier = np.concatenate([self.children(int(v)) for v in frontier])
        return depth


def build_region_tree(table: RegionTable) -> RegionTree:
    """Assign each region its enclosing region.

    The parent of a region is the region covering the pixel immediately left
    of its raster-first pixel; regions touching the frame border attach to
    the virtual root.
    """
    labels = table.labels
    h, w = labels.shape
    flat = labels.ravel()
    seed = table.seed
    seed_x = seed % w
    parent = np.where(seed_x > 0, flat[np.maximum(seed - 1, 0)], VIRTUAL_ROOT).astype(np.int32)

    border = np.unique(
        np.concatenate([labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]])
    )
    parent[border] = VIRTUAL_ROOT
    return RegionTree(table, parent)


@dataclass
class Candidate:
    """A white region matching the marker's topological signature."""

    root_region: int
    black_nodes: np.ndarray  # labels of the root's black children
    node_dots: dict[int, np.ndarray]  # black node label -> white dot labels
    descendant_count: int
    baseline: int | None = None  # filled by correct_errors

    @property
    def white_dots(self) -> np.ndarray:
        if not self.node_dots:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([np.asarray(v) for v in self.node_dots.values()])


def filter_candidates(
    tree: RegionTree, family: TagFamily, params: FilterParams | None = None
) -> list[Candidate]:
    """All white regions whose subtree is depth-exactly-3 with a plausible count.

    Candidates come back sorted by area, largest first.
    """
    params = params or FilterParams()
    table = tree.table
    n = table.n_regions
    parent = tree.parent

    has_parent = parent >= 0
    child_count = np.bincount(parent[has_parent], minlength=n).astype(np.int64)
    grandchild = np.bincount(
        parent[has_parent], weights=child_count[has_parent].astype(np.float64), minlength=n
    )
    great_grandchild = np.bincount(
        parent[has_parent], weights=grandchild[has_parent], minlength=n
    )

    zeta_min, zeta_max = expected_tree_counts(family)
    lo, hi = zeta_min - params.tau, zeta_max + params.tau
    count = child_count + grandchild
    mask = (
        table.is_white
        & (grandchild > 0)
        & (great_grandchild == 0)
        & (count >= lo)
        & (count <= hi)
    )
    roots = np.flatnonzero(mask)
    roots = roots[np.argsort(-table.area[roots], kind="stable")]

    out: list[Candidate] = []
    for r in roots:
        blacks = tree.children(int(r))
        dots = {int(b): tree.children(int(b)) for b in blacks}
        out.append(
            Candidate(
                root_region=int(r),
                black_nodes=blacks,
                node_dots=dots,
                descendant_count=int(count[r]),
            )
        )
    return out


def correct_errors(
    tree: RegionTree, candidate: Candidate, params: FilterParams | None = None
) -> Candidate:
    """Drop implausibly small nodes and dots; validate the node count.

    Raises :class:`NoBaselineError` if the candidate does not contain exactly
    one black child with two white dots, and :class:`StructureMismatchError`
    if the surviving node count differs from ``grid_n**2 - 1``.  The family
    check happens at decode time; here the count test uses the candidate's
    recorded family via the caller.
    """
    params = params or FilterParams()
    area = tree.table.area

    two_dot = [b for b in candidate.black_nodes if candidate.node_dots[int(b)].size == 2]
    if len(two_dot) != 1:
        raise NoBaselineError(
            f"expected exactly one two-dot baseline node, found {len(two_dot)}"
        )
    baseline = int(two_dot[0])
    baseline_area = float(area[baseline])
    node_cut = params.theta1 / 100.0 * baseline_area

    keep_nodes = [int(b) for b in candidate.black_nodes if area[int(b)] >= node_cut]
    dots = {b: candidate.node_dots[b] for b in keep_nodes}

    all_dots = (
        np.concatenate([np.asarray(v) for v in dots.values()]) if dots else np.empty(0, int)
    )
    if all_dots.size:
        mean_dot = float(area[all_dots].mean())
        dot_cut = params.theta1 / 100.0 * mean_dot
        dots = {
            b: np.asarray([d for d in v if area[int(d)] >= dot_cut], dtype=np.int64)
            for b, v in dots.items()
        }

    if baseline not in dots or dots[baseline].size != 2:
        raise NoBaselineError("baseline node lost its dots during correction")

    return replace(
        candidate,
        black_nodes=np.asarray(keep_nodes, dtype=np.int64),
        node_dots=dots,
        descendant_count=len(keep_nodes) + sum(v.size for v in dots.values()),
        baseline=baseline,
    )


def validate_node_count(candidate: Candidate, family: TagFamily) -> Candidate:
    """Reject unless the corrected candidate has exactly grid_n**2 - 1 nodes."""
    expected = family.grid_n**2 - 1
    if candidate.black_nodes.size != expected:
        raise StructureMismatchError(
            f"{candidate.black_nodes.size} black nodes after correction, expected {expected}"
        )
    return candidate


def region_centroid(table: RegionTable, label: int) -> tuple[float, float]:
    """Area centroid of one region's pixels, in pixel-center coordinates."""
    x0, y0, x1, y1 = table.bbox[label]
    crop = table.labels[y0 : y1 + 1, x0 : x1 + 1] == label
    ys, xs = np.nonzero(crop)
    return float(xs.mean() + x0), float(ys.mean() + y0)


def region_mask(table: RegionTable, label: int, pad: int = 0) -> tuple[np.ndarray, tuple[int, int]]:
    """Boolean mask crop of a region (with optional zero padding) and its
    top-left offset (x, y) in the full image."""
    h, w = table.labels.shape
    x0, y0, x1, y1 = table.bbox[label]
    x0 = max(int(x0) - pad, 0)
    y0 = max(int(y0) - pad, 0)
    x1 = min(int(x1) + pad, w - 1)
    y1 = min(int(y1) + pad, h - 1)
    return table.labels[y0 : y1 + 1, x0 : x1 + 1] == label, (x0, y0)


def dump_region_table(tree: RegionTree, path: str | Path) -> None:
    """Write the region table as CSV: label, color, area, parent, bbox, seed."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["label", "color", "area", "parent", "min_x", "min_y", "max_x", "max_y", "seed_x", "seed_y"]
        )
        for lab in range(tree.table.n_regions):
            r = tree.region(lab)
            writer.writerow(
                [r.label, r.color, r.area, r.parent, *r.bbox, *r.seed_pixel]
            )


def dump_candidates(candidates: list[Candidate], path: str | Path) -> None:
    """Write the candidate list as JSON."""
    doc = [
        {
            "root_region": c.root_region,
            "black_nodes": [int(v) for v in c.black_nodes],
            "white_dots": [int(v) for v in c.white_dots],
            "descendant_count": c.descendant_count,
            "baseline": c.baseline,
        }
        for c in candidates
    ]
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")
