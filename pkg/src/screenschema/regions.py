"""Changed-region detection between consecutive frames."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import ndimage

from .errors import ArgumentError, DimensionError
from .frameio import Frame

DEFAULT_DELTA = 30
DEFAULT_MIN_AREA = 25
DEFAULT_MERGE_GAP = 4

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, order=True)
class Rect:
    # field order matters: dataclass ordering gives the canonical (y, x, w, h) sort
    y: int
    x: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ArgumentError(f"rect extent must be positive, got {self.w}x{self.h}")

    @classmethod
    def xywh(cls, x: int, y: int, w: int, h: int) -> "Rect":
        return cls(y=int(y), x=int(x), w=int(w), h=int(h))

    @property
    def right(self) -> int:
        return self.x + self.w

    @property
    def bottom(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]

    def contains(self, other: "Rect") -> bool:
        return (
            self.x <= other.x and self.y <= other.y
            and other.right <= self.right and other.bottom <= self.bottom
        )

    def within(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.right <= width and self.bottom <= height

    def union(self, other: "Rect") -> "Rect":
        x, y = min(self.x, other.x), min(self.y, other.y)
        return Rect.xywh(x, y, max(self.right, other.right) - x, max(self.bottom, other.bottom) - y)

    def intersection_area(self, other: "Rect") -> int:
        iw = min(self.right, other.right) - max(self.x, other.x)
        ih = min(self.bottom, other.bottom) - max(self.y, other.y)
        return max(iw, 0) * max(ih, 0)

    def iou(self, other: "Rect") -> float:
        inter = self.intersection_area(other)
        return inter / (self.area + other.area - inter)

    def near(self, other: "Rect", gap: int) -> bool:
        """True when the separation along both axes is at most ``gap`` pixels."""
        return (
            other.x <= self.right + gap and self.x <= other.right + gap
            and other.y <= self.bottom + gap and self.y <= other.bottom + gap
        )


@dataclass(frozen=True, eq=False)
class ChangeMask:
    bits: np.ndarray

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ChangeMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)


def change_mask(prev: Frame, cur: Frame, delta: int = DEFAULT_DELTA) -> ChangeMask:
    if prev.luma.shape != cur.luma.shape:
        raise DimensionError(
            f"frame sizes differ: {prev.width}x{prev.height} vs {cur.width}x{cur.height}"
        )
    if not 0 <= delta <= 255:
        raise ArgumentError("delta must be within 0..255")
    diff = np.abs(cur.luma.astype(np.int16) - prev.luma.astype(np.int16))
    return ChangeMask(diff > delta)


def connected_components(mask: ChangeMask, min_area: int = DEFAULT_MIN_AREA) -> list[Rect]:
    """Bounding boxes of 8-connected components with at least ``min_area`` pixels."""
    labels, count = ndimage.label(mask.bits, structure=_EIGHT_CONNECTED)
    if count == 0:
        return []
    sizes = np.bincount(labels.ravel(), minlength=count + 1)
    rects = []
    for label, slices in enumerate(ndimage.find_objects(labels), start=1):
        if slices is None or sizes[label] < min_area:
            continue
        rows, cols = slices
        rects.append(Rect.xywh(cols.start, rows.start, cols.stop - cols.start, rows.stop - rows.start))
    return sorted(rects)


def merge_rects(rects: Iterable[Rect], gap: int = DEFAULT_MERGE_GAP) -> list[Rect]:
    """Union rectangles that lie within ``gap`` pixels of each other, to a fixpoint."""
    if gap < 0:
        raise ArgumentError("gap must be non-negative")
    boxes = sorted(set(rects))
    merged = True
    while merged:
        merged = False
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if boxes[i].near(boxes[j], gap):
                    boxes[i] = boxes[i].union(boxes[j])
                    del boxes[j]
                    merged = True
                    break
            if merged:
                break
    return sorted(set(boxes))


def changed_regions(prev: Frame, cur: Frame, delta: int = DEFAULT_DELTA,
                    min_area: int = DEFAULT_MIN_AREA, gap: int = DEFAULT_MERGE_GAP) -> list[Rect]:
    return merge_rects(connected_components(change_mask(prev, cur, delta), min_area), gap)
