"""Motion-saliency scoring and filtering of region proposals.

A region's motion score is the mean of the max-normalized optical-flow
magnitude over the pixels whose centers fall inside the region. Proposals
scoring below ``alpha`` are discarded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from tubekit.errors import InvalidInputError
from tubekit.geometry import Box

DEFAULT_ALPHA = 0.3


@dataclass(eq=False)
class FlowMagnitudeMap:
    """Dense per-frame grid of optical-flow magnitudes.

    ``values`` has shape (height, width), row-major with a top-left origin.
    """

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise InvalidInputError(f"flow map size must be positive, got {self.width}x{self.height}")
        self.width = int(self.width)
        self.height = int(self.height)
        values = np.asarray(self.values)
        if values.size != self.width * self.height:
            raise InvalidInputError(
                f"flow map has {values.size} values, expected {self.width}*{self.height}"
            )
        values = values.reshape(self.height, self.width)
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("flow map contains non-finite values")
        if np.any(values < 0):
            raise InvalidInputError("flow map contains negative magnitudes")
        self.values = values

    def __eq__(self, other):
        if not isinstance(other, FlowMagnitudeMap):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.values.dtype == other.values.dtype
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class SaliencyReport:
    total_count: int
    retained_count: int
    alpha: float

    @property
    def discard_fraction(self) -> float:
        if self.total_count == 0:
            return 0.0
        return 1.0 - self.retained_count / self.total_count


def combine_reports(reports: Iterable[SaliencyReport], alpha: float) -> SaliencyReport:
    total = retained = 0
    for r in reports:
        total += r.total_count
        retained += r.retained_count
    return SaliencyReport(total, retained, alpha)


def normalize(flow: FlowMagnitudeMap) -> FlowMagnitudeMap:
    """Divide every magnitude by the frame maximum; an all-zero map stays zero."""
    values = np.asarray(flow.values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("flow map contains non-finite values")
    peak = values.max()
    if peak == 0:
        return FlowMagnitudeMap(flow.width, flow.height, np.zeros_like(values))
    return FlowMagnitudeMap(flow.width, flow.height, values / peak)


def pixel_window(flow: FlowMagnitudeMap, r: Box) -> Tuple[int, int, int, int]:
    """Row/column index ranges of the pixels whose centers lie in ``r``.

    Pixel (i, j) has center (j + 0.5, i + 0.5); it belongs to r when
    x1 <= j + 0.5 < x2 and y1 <= i + 0.5 < y2. Returns (row0, row1, col0, col1)
    as half-open ranges already clipped to the map.
    """
    col0 = max(0, math.ceil(r.x1 - 0.5))
    col1 = min(flow.width, math.ceil(r.x2 - 0.5))
    row0 = max(0, math.ceil(r.y1 - 0.5))
    row1 = min(flow.height, math.ceil(r.y2 - 0.5))
    return row0, row1, col0, col1


def region_motion_score(flow: FlowMagnitudeMap, r: Box) -> float:
    """Mean normalized magnitude over the pixels of ``r`` (clipped to the map).

    ``flow`` must already be normalized.
    """
    row0, row1, col0, col1 = pixel_window(flow, r)
    if row1 <= row0 or col1 <= col0:
        raise InvalidInputError(
            f"region {r.as_tuple()} covers no pixel centers of the {flow.width}x{flow.height} map"
        )
    return float(flow.values[row0:row1, col0:col1].mean())


def score_regions(proposals: Sequence, flow: FlowMagnitudeMap) -> List[float]:
    """Motion scores for each proposal against the raw (un-normalized) map."""
    _check_single_frame(proposals)
    norm = normalize(flow)
    return [region_motion_score(norm, p.box) for p in proposals]


def filter_regions(proposals: Sequence, flow: FlowMagnitudeMap, alpha: float = DEFAULT_ALPHA):
    """Keep proposals whose motion score is >= alpha, in input order.

    ``flow`` is the raw map of the frame all proposals belong to. Returns the
    retained list and a :class:`SaliencyReport`.
    """
    if not (0.0 <= alpha <= 1.0) or math.isnan(alpha):
        raise InvalidInputError(f"alpha must lie in [0, 1], got {alpha}")
    scores = score_regions(proposals, flow)
    retained = [p for p, s in zip(proposals, scores) if s >= alpha]
    return retained, SaliencyReport(len(proposals), len(retained), alpha)


def _check_single_frame(proposals: Sequence) -> None:
    keys = {(p.video_id, p.frame) for p in proposals}
    if len(keys) > 1:
        raise InvalidInputError(f"proposals span several frames: {sorted(keys)[:3]}")
