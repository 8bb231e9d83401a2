"""Marker families: grid geometry, the ID <-> bit-string codec, and canonical layout.

A family is defined by its grid size ``n``: the marker interior is an
``n x n`` lattice of node cells.  The baseline node occupies the two leftmost
cells of the top row in canonical orientation; every remaining cell carries a
single black node encoding one bit (1 = the node contains a white child dot).
Bits are ordered row-major over the non-baseline cells, most significant bit
first, so an ID maps to its plain big-endian binary expansion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

FORMAT_VERSION = 1

#: Grid sizes with first-class support.
SUPPORTED_GRIDS = (3, 4, 5)


@dataclass(frozen=True)
class TagFamily:
    """A marker family: grid size, baseline cell pair, and data-cell order."""

    grid_n: int
    baseline_cells: tuple[tuple[int, int], tuple[int, int]]
    data_cell_order: tuple[tuple[int, int], ...]
    version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        n = self.grid_n
        if n < 2:
            raise ValueError(f"grid size must be >= 2, got {n}")
        (r0, c0), (r1, c1) = self.baseline_cells
        if r0 != r1 or abs(c0 - c1) != 1:
            raise ValueError("baseline cells must be horizontally adjacent")
        cells = {(i, j) for i in range(n) for j in range(n)}
        expected = cells - set(self.baseline_cells)
        if set(self.data_cell_order) != expected or len(self.data_cell_order) != len(expected):
            raise ValueError("data_cell_order must be a permutation of the non-baseline cells")

    @property
    def n_bits(self) -> int:
        return self.grid_n**2 - 2

    @property
    def capacity(self) -> int:
        return 1 << self.n_bits

    @property
    def name(self) -> str:
        return f"{self.grid_n}x{self.grid_n}"

    @classmethod
    def of(cls, grid_n: int) -> "TagFamily":
        """Canonical family for a grid size: baseline = top-left cell pair,
        data cells in row-major order."""
        n = int(grid_n)
        if n not in SUPPORTED_GRIDS:
            raise ValueError(f"unsupported grid size {n}; supported: {SUPPORTED_GRIDS}")
        baseline = ((0, 0), (0, 1))
        order = tuple(
            (i, j) for i in range(n) for j in range(n) if (i, j) not in baseline
        )
        return cls(grid_n=n, baseline_cells=baseline, data_cell_order=order)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "grid_n": self.grid_n,
            "baseline_cells": [list(c) for c in self.baseline_cells],
            "data_cell_order": [list(c) for c in self.data_cell_order],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TagFamily":
        return cls(
            grid_n=int(data["grid_n"]),
            baseline_cells=tuple(tuple(int(v) for v in c) for c in data["baseline_cells"]),
            data_cell_order=tuple(tuple(int(v) for v in c) for c in data["data_cell_order"]),
            version=int(data.get("version", FORMAT_VERSION)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TagFamily":
        return cls.from_dict(json.loads(text))


class TagId:
    """An identity within a family; value in ``[0, capacity)``."""

    __slots__ = ("family", "value")

    def __init__(self, family: TagFamily, value: int):
        value = int(value)
        if not 0 <= value < family.capacity:
            raise ValueError(f"id {value} out of range for family {family.name}")
        self.family = family
        self.value = value

    def __repr__(self) -> str:
        return f"TagId({self.family.name}, {self.value})"

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, TagId)
            and other.value == self.value
            and other.family == self.family
        )

    def __hash__(self) -> int:
        return hash((self.family.grid_n, self.value))


def encode_id(tag_id: TagId) -> np.ndarray:
    """Big-endian bit vector of length ``grid_n**2 - 2`` for an id.

    Bit ``k`` belongs to ``data_cell_order[k]``; the first data cell carries
    the most significant bit.
    """
    n_bits = tag_id.family.n_bits
    value = tag_id.value
    bits = np.zeros(n_bits, dtype=np.uint8)
    for k in range(n_bits - 1, -1, -1):
        bits[k] = value & 1
        value >>= 1
    return bits


def decode_bits(family: TagFamily, bits) -> TagId:
    """Inverse of :func:`encode_id`."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.ndim != 1 or bits.size != family.n_bits:
        raise ValueError(f"expected {family.n_bits} bits, got shape {bits.shape}")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bit vector entries must be 0 or 1")
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    return TagId(family, value)


def capacity(family: TagFamily) -> int:
    """Number of distinct ids: ``2 ** (grid_n**2 - 2)``."""
    return family.capacity


def enumerate_dictionary(family: TagFamily) -> Iterator[TagId]:
    """Yield every id of the family in increasing order.

    Ids map directly to code strings, so enumeration is a plain counter with
    O(1) work per id; no search or distance pruning is involved.
    """
    make = TagId.__new__
    for value in range(family.capacity):
        tag = make(TagId)
        tag.family = family
        tag.value = value
        yield tag


def expected_tree_counts(family: TagFamily) -> tuple[int, int]:
    """(min, max) descendant count of a marker's white interior region.

    The minimum is the all-zeros marker: ``grid_n**2 - 1`` black nodes plus
    the two baseline dots.  The maximum adds one white dot per data cell.
    """
    n_sq = family.grid_n**2
    zeta_min = (n_sq - 1) + 2
    return zeta_min, zeta_min + (n_sq - 2)


def bits_to_string(bits) -> str:
    return "".join(str(int(b)) for b in bits)


def string_to_bits(text: str) -> np.ndarray:
    if not text or any(c not in "01" for c in text):
        raise ValueError(f"invalid bit string {text!r}")
    return np.array([int(c) for c in text], dtype=np.uint8)


@dataclass(frozen=True)
class CanonicalLayout:
    """Physical model of a marker: 3-D node centers on the z=0 plane.

    ``model_points`` holds the ``grid_n**2`` node centers in meters, centered
    on the marker: the two baseline dot centers first, then the data-cell
    node centers in decode order.  ``tag_size`` is the outer side length of
    the black border square; with a border ``black_border_cells`` thick the
    cell pitch is ``tag_size / (grid_n + 2 * black_border_cells)``.
    """

    family: TagFamily
    tag_size: float
    cell_pitch: float
    model_points: np.ndarray

    @classmethod
    def for_family(
        cls, family: TagFamily, tag_size: float = 0.05, black_border_cells: float = 1.0
    ) -> "CanonicalLayout":
        if tag_size <= 0:
            raise ValueError("tag size must be positive")
        n = family.grid_n
        pitch = tag_size / (n + 2.0 * black_border_cells)
        cells = list(family.baseline_cells) + list(family.data_cell_order)
        pts = np.zeros((n * n, 3))
        half = (n - 1) / 2.0
        for k, (i, j) in enumerate(cells):
            pts[k, 0] = (j - half) * pitch
            pts[k, 1] = (i - half) * pitch
        pts.setflags(write=False)
        return cls(family=family, tag_size=float(tag_size), cell_pitch=pitch, model_points=pts)

    @property
    def cells(self) -> tuple[tuple[int, int], ...]:
        """Grid cells in vertex order (baseline pair first, then data cells)."""
        return tuple(self.family.baseline_cells) + self.family.data_cell_order


def load_family(path_or_grid: str | int | Path) -> TagFamily:
    """Resolve a family from a grid size or a JSON descriptor file."""
    if isinstance(path_or_grid, int):
        return TagFamily.of(path_or_grid)
    text = str(path_or_grid)
    if text.isdigit():
        return TagFamily.of(int(text))
    return TagFamily.from_json(Path(text).read_text(encoding="utf-8"))
