"""Deterministic synthetic corpora with a known answer.

Each video holds one actor whose box moves linearly. The flow map is high
inside the actor box and a low noisy floor elsewhere. Proposals per frame are
the ground-truth box, jittered copies of it and static background boxes.
Features are Gaussian around per-action means (ground truth), background
means (distractors), or a blend of the two weighted by overlap (jitters).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from tubekit.corpus_io import Corpus, FeatureRecord, GroundTruthTrack, RegionProposal, write_corpus
from tubekit.errors import InvalidInputError
from tubekit.geometry import Box, iou
from tubekit.saliency import FlowMagnitudeMap


@dataclass(frozen=True)
class SynthConfig:
    num_videos: int = 8
    frames_per_video: int = 20
    num_actions: int = 4
    proposals_per_frame: int = 12
    feature_dim_s: int = 16
    feature_dim_m: int = 16
    class_separation: float = 8.0
    actor_flow: float = 1.0
    background_flow: float = 0.05
    jitter: float = 0.5
    seed: int = 0
    width: int = 160
    height: int = 120
    # distance from every action mean to the background mean, in noise deviations
    background_separation: float = 8.0
    # jittered proposals take features blended as iou**power toward the action mean
    overlap_power: float = 3.0

    def __post_init__(self):
        for name in ("num_videos", "frames_per_video", "num_actions", "proposals_per_frame",
                     "feature_dim_s", "feature_dim_m", "width", "height"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be positive")
        if self.class_separation < 0 or self.background_separation < 0:
            raise InvalidInputError("separations must be non-negative")
        if self.feature_dim_s + self.feature_dim_m < self.num_actions + 1:
            raise InvalidInputError("fused feature dimension must exceed num_actions")
        if not (self.actor_flow > self.background_flow * 1.1 >= 0):
            raise InvalidInputError("actor_flow must exceed the background flow ceiling")
        if self.width < 16 or self.height < 16:
            raise InvalidInputError("frames must be at least 16x16 pixels")

    def to_dict(self) -> dict:
        return asdict(self)


def action_names(n: int) -> list:
    return [f"action{i:02d}" for i in range(n)]


def _feature_means(cfg: SynthConfig, rng: np.random.Generator):
    dim = cfg.feature_dim_s + cfg.feature_dim_m
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    # orthonormal directions: actions pairwise class_separation apart, background
    # at background_separation from each action mean
    scale = cfg.class_separation / math.sqrt(2.0)
    means = np.array([scale * q[:, a] for a in range(cfg.num_actions)])
    bg_len = math.sqrt(max(cfg.background_separation**2 - scale**2, 0.0))
    background = bg_len * q[:, cfg.num_actions]
    return means, background


def _actor_track(cfg: SynthConfig, rng: np.random.Generator):
    W, H, T = cfg.width, cfg.height, cfg.frames_per_video
    w = rng.uniform(0.2, 0.3) * W
    h = rng.uniform(0.35, 0.5) * H
    # total displacement over the video stays within a quarter of the frame
    dx = rng.uniform(-0.25, 0.25) * W
    dy = rng.uniform(-0.1, 0.1) * H
    x0 = rng.uniform(max(0.0, -dx), W - w - max(0.0, dx))
    y0 = rng.uniform(max(0.0, -dy), H - h - max(0.0, dy))
    boxes = []
    for t in range(T):
        f = t / (T - 1) if T > 1 else 0.0
        x, y = x0 + f * dx, y0 + f * dy
        boxes.append(Box(round(x, 2), round(y, 2), round(x + w, 2), round(y + h, 2)))
    return boxes


def _covered_fraction(a: Box, b: Box) -> float:
    """Fraction of a's area inside b."""
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    return iw * ih / a.area


def _clip(x1, y1, x2, y2, W, H):
    x1, y1 = max(0.0, x1), max(0.0, y1)
    x2, y2 = min(float(W), x2), min(float(H), y2)
    if x2 - x1 < 2 or y2 - y1 < 2:
        return None
    return Box(round(x1, 2), round(y1, 2), round(x2, 2), round(y2, 2))


def _jittered(gt: Box, level: float, cfg: SynthConfig, rng: np.random.Generator) -> Box:
    """A perturbed copy of gt that keeps at least half its area on the actor."""
    for _ in range(200):
        sx = math.exp(rng.uniform(-level, level))
        sy = math.exp(rng.uniform(-level, level))
        cx = (gt.x1 + gt.x2) / 2 + rng.uniform(-level, level) * gt.width
        cy = (gt.y1 + gt.y2) / 2 + rng.uniform(-level, level) * gt.height
        w, h = gt.width * sx, gt.height * sy
        b = _clip(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, cfg.width, cfg.height)
        if b is not None and b != gt and _covered_fraction(b, gt) >= 0.5:
            return b
    # shrink toward the center: always fully on the actor
    f = max(0.3, 1.0 - level)
    cx, cy = (gt.x1 + gt.x2) / 2, (gt.y1 + gt.y2) / 2
    return Box(round(cx - f * gt.width / 2, 2), round(cy - f * gt.height / 2, 2),
               round(cx + f * gt.width / 2, 2), round(cy + f * gt.height / 2, 2))


def _distractors(n: int, track, cfg: SynthConfig, rng: np.random.Generator):
    """Static boxes that never touch the actor in any frame."""
    W, H = cfg.width, cfg.height
    out = []
    tries = 0
    while len(out) < n:
        tries += 1
        scale = 0.35 if tries < 2000 else 0.12
        w = rng.uniform(0.08, scale) * W
        h = rng.uniform(0.08, scale) * H
        x, y = rng.uniform(0, W - w), rng.uniform(0, H - h)
        b = Box(round(x, 2), round(y, 2), round(x + w, 2), round(y + h, 2))
        if all(_covered_fraction(b, g) == 0.0 for g in track):
            out.append(b)
        elif tries > 20000:
            raise InvalidInputError("frame too small to place background distractors clear of the actor")
    return out


def _flow_map(gt: Box, cfg: SynthConfig, rng: np.random.Generator) -> FlowMagnitudeMap:
    W, H = cfg.width, cfg.height
    values = cfg.background_flow + rng.uniform(0.0, 0.1 * cfg.background_flow, size=(H, W))
    cols = (np.arange(W) + 0.5)
    rows = (np.arange(H) + 0.5)
    inside = ((rows[:, None] >= gt.y1) & (rows[:, None] < gt.y2)) & ((cols[None, :] >= gt.x1) & (cols[None, :] < gt.x2))
    values[inside] = cfg.actor_flow
    return FlowMagnitudeMap(W, H, values.astype(np.float32))


def build(cfg: SynthConfig) -> Corpus:
    """Generate the corpus in memory."""
    rng = np.random.default_rng(cfg.seed)
    actions = action_names(cfg.num_actions)
    means, background = _feature_means(cfg, rng)
    ds, dm = cfg.feature_dim_s, cfg.feature_dim_m
    n_jitter = (cfg.proposals_per_frame - 1) // 2
    n_distract = cfg.proposals_per_frame - 1 - n_jitter
    corpus = Corpus(actions=actions)

    def feature(video, frame, rid, mean):
        vec = np.round(mean + rng.standard_normal(ds + dm), 6)
        corpus.features[(video, frame, rid)] = FeatureRecord(video, frame, rid, vec[:ds], vec[ds:])

    width = len(str(cfg.num_videos - 1))
    for v in range(cfg.num_videos):
        video = f"vid{v:0{width}d}"
        a = v % cfg.num_actions
        track = _actor_track(cfg, rng)
        distractors = _distractors(n_distract, track, cfg, rng)
        corpus.frame_counts[video] = cfg.frames_per_video
        corpus.tracks.append(GroundTruthTrack(video, 0, actions[a], tuple(enumerate(track))))
        for t, gt in enumerate(track):
            corpus.flow[(video, t)] = _flow_map(gt, cfg, rng)
            props = [RegionProposal(video, t, 0, gt)]
            feature(video, t, 0, means[a])
            for k in range(n_jitter):
                level = cfg.jitter * (k + 1) / n_jitter
                b = _jittered(gt, level, cfg, rng)
                rid = len(props)
                props.append(RegionProposal(video, t, rid, b))
                wgt = iou(b, gt) ** cfg.overlap_power
                feature(video, t, rid, wgt * means[a] + (1.0 - wgt) * background)
            for b in distractors:
                rid = len(props)
                props.append(RegionProposal(video, t, rid, b))
                feature(video, t, rid, background)
            corpus.proposals[(video, t)] = props
    return corpus


def generate(cfg: SynthConfig, root) -> Corpus:
    """Generate a corpus and write it under ``root`` in the standard layout."""
    corpus = build(cfg)
    try:
        write_corpus(corpus, Path(root))
    except OSError as exc:
        raise OSError(f"cannot write synthetic corpus to {root}: {exc}") from exc
    return corpus
