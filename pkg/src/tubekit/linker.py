"""Linking per-frame scored regions into action tubes.

Consecutive regions are joined by a link score: the two regions' action scores
plus ``lambda`` times their IoU. A tube is the region sequence (one per frame)
maximizing the summed link scores divided by the frame count T, found with
Viterbi. Tubes are extracted repeatedly, removing each found path's regions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from tubekit.errors import InvalidInputError, NoFeasiblePathError
from tubekit.geometry import Box, boxes_to_array, iou, pairwise_iou


@dataclass(frozen=True)
class ScoredRegion:
    region_id: int
    frame: int
    box: Box
    unary: float

    def __post_init__(self):
        if not math.isfinite(self.unary):
            raise InvalidInputError(f"region {self.region_id} at frame {self.frame} has non-finite score")


@dataclass(frozen=True)
class ActionTube:
    video_id: str
    action: str
    regions: Tuple[Tuple[int, Box], ...]
    score: float

    def __post_init__(self):
        if not self.regions:
            raise InvalidInputError("an action tube needs at least one region")
        for k, (fr, _) in enumerate(self.regions):
            if fr != k:
                raise InvalidInputError(f"tube frames must be consecutive from 0, got {fr} at position {k}")
        if not math.isfinite(self.score):
            raise InvalidInputError("tube score must be finite")

    def __len__(self):
        return len(self.regions)


@dataclass(frozen=True)
class LinkConfig:
    lam: float = 1.0
    max_tubes: int = 3

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise InvalidInputError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.max_tubes < 1:
            raise InvalidInputError(f"max_tubes must be positive, got {self.max_tubes}")


def link_score(r_t: ScoredRegion, r_t1: ScoredRegion, lam: float) -> float:
    if r_t.frame + 1 != r_t1.frame:
        raise InvalidInputError(f"cannot link frame {r_t.frame} to frame {r_t1.frame}")
    return r_t.unary + r_t1.unary + lam * iou(r_t.box, r_t1.box)


def path_score(path: Sequence[ScoredRegion], lam: float) -> float:
    """Tube score of a fixed path: summed link scores divided by T.

    A single-frame path scores its region's unary.
    """
    if len(path) == 1:
        return path[0].unary
    total = 0.0
    for a, b in zip(path, path[1:]):
        total += link_score(a, b, lam)
    return total / len(path)


def best_path(frames: Sequence[Sequence[ScoredRegion]], lam: float = 1.0):
    """Viterbi search for the highest-scoring one-region-per-frame path.

    Returns (path, score) where score = (sum of T-1 link scores) / T. Ties go
    to the lowest region_id, at every argmax.
    """
    if len(frames) == 0:
        raise NoFeasiblePathError("video has no frames")
    ordered = []
    for t, regions in enumerate(frames):
        if len(regions) == 0:
            raise NoFeasiblePathError(f"frame {t} has no regions")
        ordered.append(sorted(regions, key=lambda r: r.region_id))
    T = len(ordered)

    if T == 1:
        u = np.array([r.unary for r in ordered[0]])
        k = int(np.argmax(u))
        return [ordered[0][k]], float(u[k])

    unary = [np.array([r.unary for r in regs]) for regs in ordered]
    boxes = [boxes_to_array(r.box for r in regs) for regs in ordered]
    value = np.zeros(len(ordered[0]))
    back = []
    for t in range(1, T):
        # cand[i, j]: best path value ending at i in frame t-1, then linking to j in frame t.
        # Summation order matches link_score: (u_prev + u_cur) + lam * iou.
        link = (unary[t - 1][:, None] + unary[t][None, :]) + lam * pairwise_iou(boxes[t - 1], boxes[t])
        cand = value[:, None] + link
        arg = np.argmax(cand, axis=0)  # first maximum = lowest region_id
        back.append(arg)
        value = cand[arg, np.arange(cand.shape[1])]
    k = int(np.argmax(value))
    total = float(value[k])
    idx = [k]
    for arg in reversed(back):
        idx.append(int(arg[idx[-1]]))
    idx.reverse()
    path = [ordered[t][i] for t, i in enumerate(idx)]
    return path, total / T


def extract_tubes(frames: Sequence[Sequence[ScoredRegion]], action: str, config: LinkConfig = LinkConfig(),
                  video_id: str = "") -> List[ActionTube]:
    """Repeatedly take the best path and remove its regions.

    Stops once ``config.max_tubes`` tubes are found or any frame runs out of
    regions. Tubes come out in extraction order, which is non-increasing in score.
    """
    remaining = [list(regs) for regs in frames]
    if not remaining or any(len(r) == 0 for r in remaining):
        raise NoFeasiblePathError(f"video {video_id!r}: every frame needs at least one region")
    tubes = []
    while len(tubes) < config.max_tubes and all(remaining):
        path, score = best_path(remaining, config.lam)
        tubes.append(ActionTube(video_id, action, tuple((r.frame, r.box) for r in path), score))
        for t, r in enumerate(path):
            remaining[t] = [x for x in remaining[t] if x.region_id != r.region_id]
    return tubes


def classify_video(tubes: Sequence[ActionTube], actions: Optional[Sequence[str]] = None) -> str:
    """Label of the highest-scoring tube; ties go to the earliest action in ``actions``."""
    if not tubes:
        raise InvalidInputError("cannot classify a video without tubes")
    best: Dict[str, float] = {}
    for t in tubes:
        if t.action not in best or t.score > best[t.action]:
            best[t.action] = t.score
    order = list(actions) if actions is not None else []
    for a in best:
        if a not in order:
            if actions is not None:
                raise InvalidInputError(f"tube action {a!r} not in vocabulary")
            order.append(a)
    label, top = None, -math.inf
    for a in order:
        if a in best and best[a] > top:
            label, top = a, best[a]
    return label
