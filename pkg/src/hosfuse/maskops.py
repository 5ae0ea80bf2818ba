"""Exact integer pixel geometry on run-length-encoded binary masks.

Masks use the COCO layout: runs alternate zero/one counts over a column-major
scan (scan index ``x * height + y``), starting with a zero count.  Dense grids
are numpy boolean arrays of shape ``(height, width)`` indexed ``[y, x]``.

Area-type queries (intersection, pixels in a box, point lookup) run directly
on the one-pixel intervals of the RLE, so they never materialize the grid.
Ratios are returned as :class:`fractions.Fraction` of integer counts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np


class MalformedMaskError(ValueError):
    """Raised when a run list does not describe a valid mask."""


class DimensionMismatchError(ValueError):
    pass


class EmptyMaskError(ValueError):
    pass


@dataclass(frozen=True)
class BBox:
    """Half-open integer box ``[x1, x2) x [y1, y2)``."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise TypeError(f"box coordinates must be integers, got {v!r}")
        if not (0 <= self.x1 < self.x2 and 0 <= self.y1 < self.y2):
            raise ValueError(f"degenerate or negative box {self.as_list()}")

    @property
    def area(self) -> int:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list[int]:
        return [int(self.x1), int(self.y1), int(self.x2), int(self.y2)]

    def fits(self, width: int, height: int) -> bool:
        return self.x2 <= width and self.y2 <= height

    def clip(self, width: int, height: int) -> BBox | None:
        """Intersection with the image rectangle, or None if nothing is left."""
        x2, y2 = min(self.x2, width), min(self.y2, height)
        if x2 <= self.x1 or y2 <= self.y1:
            return None
        return BBox(self.x1, self.y1, x2, y2)

    @classmethod
    def outward(cls, x1: float, y1: float, x2: float, y2: float) -> BBox:
        """Round fractional detector coordinates outward to integer pixels."""
        return cls(math.floor(x1), math.floor(y1), math.ceil(x2), math.ceil(y2))


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")


@dataclass(frozen=True)
class BinaryMask:
    """Canonical RLE mask. Construction validates the run list."""

    width: int
    height: int
    runs: tuple[int, ...] = field(repr=False)

    def __post_init__(self):
        if not isinstance(self.runs, tuple):
            object.__setattr__(self, "runs", tuple(int(r) for r in self.runs))
        _check_runs(self.width, self.height, self.runs)

    def __repr__(self):
        return f"BinaryMask({self.width}x{self.height}, area={mask_area(self)})"

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @cached_property
    def _intervals(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        # starts/ends of one-runs in scan order, plus exclusive prefix sums of lengths
        bounds = np.cumsum(np.asarray((0,) + self.runs, dtype=np.int64))
        starts = bounds[1:-1:2]
        ends = bounds[2::2]
        lengths = ends - starts
        cum = np.concatenate(([0], np.cumsum(lengths)))
        return starts, ends, cum

    @classmethod
    def zeros(cls, width: int, height: int) -> BinaryMask:
        return cls(width, height, (width * height,))

    @classmethod
    def full(cls, width: int, height: int) -> BinaryMask:
        return cls(width, height, (0, width * height))

    @classmethod
    def from_box(cls, width: int, height: int, box: BBox) -> BinaryMask:
        grid = np.zeros((height, width), dtype=bool)
        grid[box.y1 : box.y2, box.x1 : box.x2] = True
        return rle_encode(grid)


def _check_runs(width: int, height: int, runs: Sequence[int]) -> None:
    if width < 1 or height < 1:
        raise MalformedMaskError(f"mask dimensions must be >= 1, got {width}x{height}")
    if not runs:
        raise MalformedMaskError("empty run list")
    if any(r < 0 for r in runs):
        raise MalformedMaskError("negative run length")
    if any(r == 0 for r in runs[1:]):
        raise MalformedMaskError("zero-length interior run (non-canonical RLE)")
    total = sum(runs)
    if total != width * height:
        raise MalformedMaskError(f"runs sum to {total}, expected {width * height}")


def _same_dims(a: BinaryMask, b: BinaryMask) -> None:
    if a.width != b.width or a.height != b.height:
        raise DimensionMismatchError(
            f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def _ones_before(mask: BinaryMask, q: np.ndarray) -> np.ndarray:
    """Number of one-pixels with scan index < q (vectorized over q)."""
    starts, ends, cum = mask._intervals
    q = np.asarray(q, dtype=np.int64)
    if len(starts) == 0:
        return np.zeros_like(q)
    k = np.searchsorted(starts, q, side="left")
    last = np.maximum(k - 1, 0)
    partial = np.minimum(q - starts[last], ends[last] - starts[last])
    return np.where(k > 0, cum[last] + partial, 0)


def rle_decode(mask: BinaryMask) -> np.ndarray:
    _check_runs(mask.width, mask.height, mask.runs)
    values = np.arange(len(mask.runs)) % 2 == 1
    flat = np.repeat(values, mask.runs)
    return flat.reshape(mask.width, mask.height).T


def rle_encode(grid: np.ndarray) -> BinaryMask:
    grid = np.asarray(grid, dtype=bool)
    if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
        raise MalformedMaskError(f"grid must be a non-empty 2-D array, got shape {grid.shape}")
    height, width = grid.shape
    flat = grid.ravel(order="F")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return BinaryMask(width, height, tuple(runs))


def mask_area(mask: BinaryMask) -> int:
    return int(sum(mask.runs[1::2]))


def mask_intersection_area(a: BinaryMask, b: BinaryMask) -> int:
    _same_dims(a, b)
    if mask_area(a) > mask_area(b):
        a, b = b, a
    starts, ends, _ = a._intervals
    if len(starts) == 0:
        return 0
    return int(np.sum(_ones_before(b, ends) - _ones_before(b, starts)))


def mask_iou(a: BinaryMask, b: BinaryMask) -> Fraction:
    inter = mask_intersection_area(a, b)
    union = mask_area(a) + mask_area(b) - inter
    if union == 0:
        return Fraction(0)
    return Fraction(inter, union)


def box_iou(a: BBox, b: BBox) -> Fraction:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(iw, 0) * max(ih, 0)
    return Fraction(inter, a.area + b.area - inter)


def box_center(box: BBox) -> Point:
    return Point((box.x1 + box.x2) / 2, (box.y1 + box.y2) / 2)


def mask_pixels_in_box(mask: BinaryMask, box: BBox) -> int:
    clipped = box.clip(mask.width, mask.height)
    if clipped is None:
        return 0
    cols = np.arange(clipped.x1, clipped.x2, dtype=np.int64) * mask.height
    hi = _ones_before(mask, cols + clipped.y2)
    lo = _ones_before(mask, cols + clipped.y1)
    return int(np.sum(hi - lo))


def mask_contains_point(mask: BinaryMask, p: Point) -> bool:
    px, py = math.floor(p.x), math.floor(p.y)
    if not (0 <= px < mask.width and 0 <= py < mask.height):
        raise ValueError(f"point ({p.x}, {p.y}) outside {mask.width}x{mask.height} image")
    q = px * mask.height + py
    counts = _ones_before(mask, np.array([q, q + 1]))
    return bool(counts[1] - counts[0])


def mask_tight_box(mask: BinaryMask) -> BBox:
    starts, ends, _ = mask._intervals
    if len(starts) == 0:
        raise EmptyMaskError("tight box of an empty mask")
    h = mask.height
    last = ends - 1
    first_col, last_col = starts // h, last // h
    single = first_col == last_col
    ymin = np.where(single, starts % h, 0)
    ymax = np.where(single, last % h, h - 1)
    return BBox(
        int(first_col.min()), int(ymin.min()), int(last_col.max()) + 1, int(ymax.max()) + 1
    )


def mask_union(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    _same_dims(a, b)
    return rle_encode(rle_decode(a) | rle_decode(b))


def mask_subtract(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    _same_dims(a, b)
    return rle_encode(rle_decode(a) & ~rle_decode(b))
