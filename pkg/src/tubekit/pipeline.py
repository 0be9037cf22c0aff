"""Pipeline stages operating on a corpus root and a work directory.

Each stage reads its inputs from disk and writes its outputs atomically, so
stages can run in separate processes and re-running one reproduces its
outputs byte for byte.
"""

from __future__ import annotations

import logging
import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from tubekit import corpus_io as cio
from tubekit.classifier import ActionModel, TrainConfig, assign_training_labels, score_matrix, train_svm
from tubekit.corpus_io import Corpus, MetricRow, SaliencyRow, ScoreRow
from tubekit.errors import InvalidInputError, LoadError, StageError
from tubekit.geometry import Box, boxes_to_array, pairwise_iou
from tubekit.linker import LinkConfig, ScoredRegion, classify_video, extract_tubes
from tubekit.metrics import Detection, confusion_matrix, frame_ap, roc_auc, video_ap
from tubekit.saliency import combine_reports, normalize, region_motion_score, SaliencyReport

logger = logging.getLogger(__name__)

SALIENCY_FILE = "saliency.tsv"
SALIENCY_REPORT_FILE = "saliency_report.tsv"
MODELS_FILE = "models.tsv"
SCORES_FILE = "scores.tsv"
TUBES_FILE = "tubes.tsv"
LABELS_FILE = "labels.tsv"
METRICS_FILE = "metrics.tsv"
CONFUSION_FILE = "confusion.tsv"

# stage that produces each work file, for missing-dependency errors
PRODUCER = {
    SALIENCY_FILE: "filter",
    MODELS_FILE: "train",
    SCORES_FILE: "score",
    TUBES_FILE: "link",
    LABELS_FILE: "classify",
}


def max_workers() -> int:
    raw = os.environ.get("TUBEKIT_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise InvalidInputError(f"TUBEKIT_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise InvalidInputError(f"TUBEKIT_THREADS must be a positive integer, got {raw!r}")
    return n


def _map(fn, items):
    """Ordered map, parallel up to TUBEKIT_THREADS; results do not depend on scheduling."""
    items = list(items)
    n = min(max_workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _require(stage: str, work: Path, name: str) -> Path:
    path = work / name
    if not path.exists():
        producer = PRODUCER[name]
        raise StageError(stage, f"{name} not found; run `{producer}` first", file=path, requires=producer)
    return path


# ---------------------------------------------------------------------------
# filter


def run_filter(corpus: Corpus, work, alpha: float = 0.3) -> SaliencyReport:
    if not (0.0 <= alpha <= 1.0):
        raise InvalidInputError(f"alpha must lie in [0, 1], got {alpha}")
    work = Path(work)
    rows: List[SaliencyRow] = []
    reports = []
    for (video, frame), props in corpus.proposals.items():
        norm = normalize(corpus.flow[(video, frame)])
        kept = 0
        for p in props:
            s = region_motion_score(norm, p.box)
            rows.append(SaliencyRow(video, frame, p.region_id, s, s >= alpha))
            kept += s >= alpha
        reports.append(SaliencyReport(len(props), kept, alpha))
    report = combine_reports(reports, alpha)
    cio.write_saliency(rows, work / SALIENCY_FILE)
    cio.write_saliency_report(report, work / SALIENCY_REPORT_FILE)
    logger.info("filter: kept %d of %d proposals (alpha=%g)", report.retained_count, report.total_count, alpha)
    return report


def link_candidates(corpus: Corpus, saliency: Sequence[SaliencyRow]) -> Dict[Tuple[str, int], List[int]]:
    """Region ids used for linking in each frame.

    Motion-salient regions, or the single most salient one (lowest region_id
    on ties) when a frame kept none.
    """
    by_frame = defaultdict(list)
    for r in saliency:
        by_frame[(r.video_id, r.frame)].append(r)
    out = {}
    for key in sorted(by_frame):
        rows = by_frame[key]
        kept = [r.region_id for r in rows if r.retained]
        if not kept:
            best = max(rows, key=lambda r: (r.score, -r.region_id))
            kept = [best.region_id]
        out[key] = sorted(kept)
    return out


# ---------------------------------------------------------------------------
# train / score


def _action_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def run_train(corpus: Corpus, work, config: TrainConfig = TrainConfig()) -> List[ActionModel]:
    work = Path(work)
    if not corpus.actions:
        raise InvalidInputError("corpus has an empty action vocabulary")

    def train_one(item):
        i, action = item
        pos, neg = assign_training_labels(corpus, action, config.neg_overlap)
        cfg = TrainConfig(config.neg_overlap, config.C, config.hnm_rounds, config.initial_neg_per_pos,
                          _action_seed(config.seed, i), config.max_epochs, config.tol)
        logger.info("train %s: %d positives, %d negatives", action, len(pos), len(neg))
        return train_svm(pos, neg, cfg, action)

    models = _map(train_one, enumerate(corpus.actions))
    cio.write_models(models, work / MODELS_FILE)
    return models


def load_models(stage: str, corpus: Corpus, work: Path) -> Dict[str, ActionModel]:
    path = _require(stage, work, MODELS_FILE)
    models = {m.action: m for m in cio.read_models(path)}
    missing = [a for a in corpus.actions if a not in models]
    if missing:
        raise StageError(stage, f"models.tsv lacks actions {missing}; re-run `train`", file=path, requires="train")
    dims = corpus.feature_dims
    for m in models.values():
        if dims is not None and m.dim != sum(dims):
            raise StageError(stage, f"model {m.action!r} has dim {m.dim}, corpus features have {sum(dims)}",
                             file=path, requires="train")
    return models


def _frame_matrix(corpus: Corpus, video: str, frame: int, region_ids: Sequence[int]) -> np.ndarray:
    return np.array([corpus.fused_feature(video, frame, r) for r in region_ids])


def run_score(corpus: Corpus, work) -> List[ScoreRow]:
    work = Path(work)
    models = load_models("score", corpus, work)
    rows = []
    for (video, frame), props in corpus.proposals.items():
        ids = [p.region_id for p in props if (video, frame, p.region_id) in corpus.features]
        if not ids:
            continue
        X = _frame_matrix(corpus, video, frame, ids)
        per_action = [score_matrix(models[a], X) for a in corpus.actions]
        for k, rid in enumerate(ids):
            for a, s in zip(corpus.actions, per_action):
                rows.append(ScoreRow(video, frame, rid, a, float(s[k])))
    cio.write_scores(rows, work / SCORES_FILE)
    return rows


# ---------------------------------------------------------------------------
# link / classify


def run_link(corpus: Corpus, work, config: LinkConfig = LinkConfig()):
    work = Path(work)
    models = load_models("link", corpus, work)
    candidates = link_candidates(corpus, cio.read_saliency(_require("link", work, SALIENCY_FILE)))

    def link_video(video):
        T = corpus.frame_counts[video]
        per_frame = []
        for t in range(T):
            ids = [r for r in candidates.get((video, t), []) if (video, t, r) in corpus.features]
            boxes = {p.region_id: p.box for p in corpus.frame_proposals(video, t)}
            per_frame.append((ids, [boxes[r] for r in ids], _frame_matrix(corpus, video, t, ids) if ids else None))
        tubes = []
        for a in corpus.actions:
            frames = []
            for t, (ids, boxes, X) in enumerate(per_frame):
                s = score_matrix(models[a], X) if ids else []
                frames.append([ScoredRegion(r, t, b, float(u)) for r, b, u in zip(ids, boxes, s)])
            tubes.extend(extract_tubes(frames, a, config, video_id=video))
        return tubes

    tubes = [t for batch in _map(link_video, corpus.videos) for t in batch]
    cio.write_tubes(tubes, work / TUBES_FILE)
    return tubes


def run_classify(corpus: Corpus, work) -> Dict[str, str]:
    work = Path(work)
    tubes = cio.read_tubes(_require("classify", work, TUBES_FILE))
    by_video = defaultdict(list)
    for t in tubes:
        by_video[t.video_id].append(t)
    labels = {v: classify_video(by_video[v], corpus.actions) for v in sorted(by_video)}
    cio.write_labels(labels, work / LABELS_FILE)
    return labels


# ---------------------------------------------------------------------------
# eval


def nms(dets: Sequence[Detection], threshold: float) -> List[Detection]:
    """Greedy non-maximum suppression within one (video, frame, action) group."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    if threshold >= 1.0 or len(order) < 2:
        return [dets[i] for i in order]
    boxes = boxes_to_array(d.box for d in dets)
    ov = pairwise_iou(boxes, boxes)
    keep = []
    for i in order:
        if all(ov[i, j] <= threshold for j in keep):
            keep.append(i)
    return [dets[i] for i in keep]


def frame_detections(corpus: Corpus, scores: Sequence[ScoreRow], candidates, nms_threshold: float) -> List[Detection]:
    groups = defaultdict(list)
    boxes = {}
    for r in scores:
        key = (r.video_id, r.frame)
        if r.region_id not in candidates.get(key, ()):
            continue
        if key not in boxes:
            boxes[key] = {p.region_id: p.box for p in corpus.frame_proposals(*key)}
        box = boxes[key][r.region_id]
        groups[(r.video_id, r.frame, r.action)].append(Detection(r.video_id, r.frame, box, r.action, r.score))
    out = []
    for key in sorted(groups):
        out.extend(nms(groups[key], nms_threshold))
    return out


@dataclass
class EvalOutput:
    rows: List[MetricRow]
    confusion: np.ndarray | None
    accuracy: float


def _fmt_sigma(s: float) -> str:
    return repr(float(s))


def run_eval(corpus: Corpus, work, sigmas=(0.5,), topk: int = 3, fpr_max: float = 0.6,
             frame_nms: float = 0.3, curves_dir=None) -> EvalOutput:
    work = Path(work)
    tubes = cio.read_tubes(_require("eval", work, TUBES_FILE))
    labels = cio.read_labels(_require("eval", work, LABELS_FILE))
    scores = cio.read_scores(_require("eval", work, SCORES_FILE))
    candidates = link_candidates(corpus, cio.read_saliency(_require("eval", work, SALIENCY_FILE)))
    dets = frame_detections(corpus, scores, candidates, frame_nms)
    actions = corpus.actions
    tracks = corpus.tracks
    rows: List[MetricRow] = []
    curves = {}
    for sigma in sigmas:
        sg = _fmt_sigma(sigma)
        for name, res in (("frame_ap", frame_ap(dets, tracks, sigma, actions)),
                          ("video_ap", video_ap(tubes, tracks, sigma, actions))):
            for a in actions:
                rows.append(MetricRow(name, a, sg, res.per_class[a]))
                if a in res.curves:
                    curves[f"pr_{name}_{a}_{sg}"] = res.curves[a]
            rows.append(MetricRow(name, "mean", sg, res.mean_ap))
        aucs = []
        for a in actions:
            class_tracks = [t for t in tracks if t.action == a]
            if not class_tracks:
                rows.append(MetricRow("auc", a, sg, float("nan")))
                continue
            roc = roc_auc([t for t in tubes if t.action == a], class_tracks, sigma, fpr_max, topk)
            aucs.append(roc.auc)
            curves[f"roc_{a}_{sg}"] = roc
            rows.append(MetricRow("auc", a, sg, roc.auc))
        rows.append(MetricRow("auc", "mean", sg, float(np.mean(aucs)) if aucs else float("nan")))

    truth = {v: corpus.video_label(v) for v in labels if corpus.video_label(v) is not None}
    predicted = {v: labels[v] for v in truth}
    matrix, accuracy = confusion_matrix(predicted, truth, actions)
    rows.append(MetricRow("accuracy", "all", "-", accuracy))
    cio.write_metrics(rows, work / METRICS_FILE)
    conf_rows = [["true\\predicted", *actions]] + [[a, *map(str, matrix[i])] for i, a in enumerate(actions)]
    cio.atomic_write_text(work / CONFUSION_FILE, "".join("\t".join(r) + "\n" for r in conf_rows))
    if curves_dir is not None:
        _dump_curves(Path(curves_dir), curves)
    return EvalOutput(rows, matrix, accuracy)


def _dump_curves(root: Path, curves: dict) -> None:
    for name, c in sorted(curves.items()):
        if name.startswith("pr_"):
            lines = ["threshold\tprecision\trecall\n"]
            lines += [f"{t!r}\t{p!r}\t{r!r}\n" for t, p, r in zip(c.thresholds.tolist(), c.precision.tolist(),
                                                                   c.recall.tolist())]
        else:
            lines = ["threshold\tfpr\ttpr\n"]
            lines += [f"{t!r}\t{f!r}\t{r!r}\n" for t, f, r in zip(c.thresholds.tolist(), c.fpr.tolist(),
                                                                 c.tpr.tolist())]
        cio.atomic_write_text(root / f"{name}.tsv", "".join(lines))
