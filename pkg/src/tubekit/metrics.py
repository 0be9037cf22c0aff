"""Detection metrics: frame-AP, video-AP, truncated ROC/AUC, confusion matrix.

Matching follows the VOC protocol: detections are visited by descending
score, each claims the unmatched same-class ground truth it overlaps most,
and counts as correct only when that overlap is strictly greater than sigma.
AP integrates the precision envelope over all recall points.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from tubekit.errors import InvalidInputError, UndefinedMetricError
from tubekit.geometry import Box, iou, mean_frame_iou


@dataclass(frozen=True)
class Detection:
    video_id: str
    frame: int
    box: Box
    action: str
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise InvalidInputError("detection score must be finite")


@dataclass
class PRCurve:
    """Precision/recall after each distinct score threshold, highest first."""

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    ap: float


@dataclass
class APResult:
    per_class: Dict[str, float]  # NaN for classes without ground truth
    mean_ap: float
    curves: Dict[str, PRCurve] = field(default_factory=dict)


@dataclass
class ROCResult:
    auc: float
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    fpr_max: float


def _check_sigma(sigma):
    if not (0.0 < sigma <= 1.0):
        raise InvalidInputError(f"sigma must lie in (0, 1], got {sigma}")


def _match(items, gts_by_key: Mapping[Hashable, list], overlap: Callable, sigma: float):
    """Greedy VOC matching.

    ``items`` are (score, key, payload); ground truths are grouped by the same
    key. Returns (scores, is_tp, matched_ids) in descending score order (stable
    for ties), where matched_ids[i] is (key, gt index) or None.
    """
    order = sorted(range(len(items)), key=lambda i: -items[i][0])
    used = set()
    scores, tp, matched = [], [], []
    for i in order:
        score, key, payload = items[i]
        best, best_j = -1.0, None
        for j, g in enumerate(gts_by_key.get(key, ())):
            if (key, j) in used:
                continue
            o = overlap(payload, g)
            if o > best:
                best, best_j = o, j
        hit = best_j is not None and best > sigma
        if hit:
            used.add((key, best_j))
        scores.append(score)
        tp.append(hit)
        matched.append((key, best_j) if hit else None)
    return np.array(scores, dtype=np.float64), np.array(tp, dtype=bool), matched


def _tie_group_ends(scores: np.ndarray) -> np.ndarray:
    """Indices of the last element of each run of equal scores (scores sorted descending)."""
    if len(scores) == 0:
        return np.zeros(0, dtype=int)
    return np.flatnonzero(np.append(scores[1:] != scores[:-1], True))


def pr_curve(scores: np.ndarray, is_tp: np.ndarray, n_gt: int) -> PRCurve:
    """All-points AP from matched detections sorted by descending score."""
    if n_gt <= 0:
        raise UndefinedMetricError("AP is undefined without ground truth")
    ends = _tie_group_ends(scores)
    ctp = np.cumsum(is_tp)[ends].astype(np.float64)
    cfp = np.cumsum(~is_tp)[ends].astype(np.float64)
    recall = ctp / n_gt
    precision = ctp / np.maximum(ctp + cfp, 1e-300)
    envelope = np.maximum.accumulate(precision[::-1])[::-1] if len(precision) else precision
    prev = np.concatenate([[0.0], recall[:-1]])
    ap = float(np.sum((recall - prev) * envelope))
    return PRCurve(scores[ends], precision, recall, ap)


def _ap_over_classes(items_by_class, gts_by_class, overlap, sigma, actions) -> APResult:
    classes = list(actions) if actions is not None else sorted(set(items_by_class) | set(gts_by_class))
    per_class, curves = {}, {}
    for c in classes:
        gts = gts_by_class.get(c, {})
        n_gt = sum(len(v) for v in gts.values())
        if n_gt == 0:
            per_class[c] = math.nan
            continue
        scores, tp, _ = _match(items_by_class.get(c, []), gts, overlap, sigma)
        curve = pr_curve(scores, tp, n_gt)
        per_class[c] = curve.ap
        curves[c] = curve
    defined = [v for v in per_class.values() if not math.isnan(v)]
    if not defined:
        raise UndefinedMetricError("no class has ground truth; mAP is undefined")
    return APResult(per_class, float(np.mean(defined)), curves)


def frame_ap(detections: Sequence[Detection], groundtruth, sigma: float = 0.5,
             actions: Optional[Sequence[str]] = None) -> APResult:
    """Per-class AP of per-frame detections against ground-truth track boxes."""
    _check_sigma(sigma)
    gts = defaultdict(lambda: defaultdict(list))
    for track in groundtruth:
        for fr, box in track.boxes:
            gts[track.action][(track.video_id, fr)].append(box)
    items = defaultdict(list)
    for d in detections:
        items[d.action].append((d.score, (d.video_id, d.frame), d.box))
    return _ap_over_classes(items, gts, iou, sigma, actions)


def _tube_track(tube) -> list:
    return list(tube.regions)


def video_ap(tubes, groundtruth, sigma: float = 0.5, actions: Optional[Sequence[str]] = None) -> APResult:
    """Per-class AP of tubes, correct when mean per-frame IoU with a same-class track exceeds sigma."""
    _check_sigma(sigma)
    gts = defaultdict(lambda: defaultdict(list))
    for track in groundtruth:
        gts[track.action][track.video_id].append(list(track.boxes))
    items = defaultdict(list)
    for t in tubes:
        items[t.action].append((t.score, t.video_id, _tube_track(t)))
    return _ap_over_classes(items, gts, mean_frame_iou, sigma, actions)


def top_k_tubes(tubes, k: int) -> list:
    """Keep the k highest-scoring tubes per (action, video); stable for ties."""
    if k < 1:
        raise InvalidInputError(f"topk must be >= 1, got {k}")
    groups = defaultdict(list)
    for t in tubes:
        groups[(t.action, t.video_id)].append(t)
    kept = []
    for key in groups:
        kept.extend(sorted(groups[key], key=lambda t: -t.score)[:k])
    return kept


def roc_auc(tubes, groundtruth, sigma: float = 0.5, fpr_max: float = 0.6, topk: int = 3) -> ROCResult:
    """Truncated ROC of tubes and the area under it up to ``fpr_max``.

    TPR is the fraction of ground-truth tracks matched; FPR is the fraction of
    retained tubes matching no track. When every retained tube matches, the
    curve is taken as flat at its final TPR, so AUC = TPR * fpr_max.
    """
    _check_sigma(sigma)
    if not (0.0 < fpr_max <= 1.0):
        raise InvalidInputError(f"fpr_max must lie in (0, 1], got {fpr_max}")
    gts = defaultdict(list)
    for track in groundtruth:
        gts[(track.action, track.video_id)].append(list(track.boxes))
    n_gt = sum(len(v) for v in gts.values())
    if n_gt == 0:
        raise UndefinedMetricError("ROC is undefined without ground-truth tracks")
    kept = top_k_tubes(tubes, topk)
    items = [(t.score, (t.action, t.video_id), _tube_track(t)) for t in kept]
    scores, tp, _ = _match(items, gts, mean_frame_iou, sigma)
    n_neg = int((~tp).sum())
    ends = _tie_group_ends(scores)
    tpr = np.concatenate([[0.0], np.cumsum(tp)[ends] / n_gt])
    if n_neg:
        fpr = np.concatenate([[0.0], np.cumsum(~tp)[ends] / n_neg])
    else:
        fpr = np.zeros(len(ends) + 1)
    thresholds = np.concatenate([[math.inf], scores[ends]])

    # Step integration: moving right from fpr[i-1] to fpr[i] happens at the height
    # already reached before this threshold (tied positives do not count early).
    auc = 0.0
    for i in range(1, len(fpr)):
        lo, hi = fpr[i - 1], min(fpr[i], fpr_max)
        if hi > lo:
            auc += (hi - lo) * tpr[i - 1]
        if fpr[i] >= fpr_max:
            break
    if fpr[-1] < fpr_max:
        auc += (fpr_max - fpr[-1]) * tpr[-1]
    return ROCResult(float(auc), fpr, tpr, thresholds, fpr_max)


def confusion_matrix(predicted: Mapping[str, str], truth: Mapping[str, str], actions: Sequence[str]):
    """Counts with rows = true class, columns = predicted class; returns (matrix, accuracy)."""
    index = {a: i for i, a in enumerate(actions)}
    if set(predicted) != set(truth):
        raise InvalidInputError("predicted and true labels must cover the same videos")
    m = np.zeros((len(actions), len(actions)), dtype=np.int64)
    for video in truth:
        t, p = truth[video], predicted[video]
        if t not in index or p not in index:
            raise InvalidInputError(f"video {video!r}: label outside the vocabulary ({t!r}, {p!r})")
        m[index[t], index[p]] += 1
    total = int(m.sum())
    accuracy = float(np.trace(m)) / total if total else math.nan
    return m, accuracy
