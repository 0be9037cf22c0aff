"""Axis-aligned boxes and overlap measures.

Boxes use real-valued pixel coordinates with an inclusive-exclusive extent,
[x1, x2) x [y1, y2), so area is exactly (x2 - x1) * (y2 - y1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from tubekit.errors import InvalidInputError


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidInputError(f"non-finite box coordinates {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise InvalidInputError(f"degenerate box {coords}: need x1 < x2 and y1 < y2")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def translate(self, dx: float, dy: float) -> "Box":
        return Box(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)


def intersection_area(a: Box, b: Box) -> float:
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    return iw * ih


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two boxes, in [0, 1]."""
    if not isinstance(a, Box) or not isinstance(b, Box):
        raise InvalidInputError("iou expects two Box instances")
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    return inter / union


def boxes_to_array(boxes: Iterable[Box]) -> np.ndarray:
    arr = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix between (N, 4) and (M, 4) arrays of valid boxes.

    Uses the same arithmetic, in the same order, as :func:`iou`, so entries are
    bit-identical to the scalar version.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.maximum(0.0, np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]))
    ih = np.maximum(0.0, np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]))
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def _frame_index(track: Sequence[Tuple[int, Box]], name: str) -> dict:
    index = {}
    for frame, box in track:
        if frame in index:
            raise InvalidInputError(f"track {name} has more than one box at frame {frame}")
        index[frame] = box
    return index


def mean_frame_iou(a: Sequence[Tuple[int, Box]], b: Sequence[Tuple[int, Box]]) -> float:
    """Mean per-frame IoU between two tracks of (frame, Box) pairs.

    The mean runs over the union of frames covered by either track; a frame
    covered by only one side contributes 0.
    """
    ia = _frame_index(a, "a")
    ib = _frame_index(b, "b")
    frames = ia.keys() | ib.keys()
    if not frames:
        raise InvalidInputError("mean_frame_iou of two empty tracks is undefined")
    total = 0.0
    for f in sorted(frames):
        if f in ia and f in ib:
            total += iou(ia[f], ib[f])
    return total / len(frames)
