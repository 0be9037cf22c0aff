"""Readers and writers for every on-disk artifact.

Corpus layout under a root directory::

    actions.txt          one action label per line (line order = vocabulary index)
    proposals.tsv        video_id frame region_id x1 y1 x2 y2
    features.tsv         video_id frame region_id Ds Dm phi_s[Ds] phi_m[Dm]
    groundtruth.tsv      video_id track_id action frame x1 y1 x2 y2
    flow/<video_id>/<frame>.flm

Stage outputs (models.tsv, tubes.tsv, ...) use the same text conventions:
UTF-8, one record per line, tab separated, every line newline terminated,
floats written with ``repr`` (shortest round-trip form).
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Sequence, Tuple

import numpy as np

from tubekit.classifier import ActionModel, fuse
from tubekit.errors import InvalidInputError, LoadError, ParseError
from tubekit.geometry import Box
from tubekit.linker import ActionTube
from tubekit.saliency import FlowMagnitudeMap, SaliencyReport

FLOW_MAGIC = b"FLM1"
_FLOW_HEADER = struct.Struct("<4sII")

ACTIONS_FILE = "actions.txt"
PROPOSALS_FILE = "proposals.tsv"
FEATURES_FILE = "features.tsv"
GROUNDTRUTH_FILE = "groundtruth.tsv"
FLOW_DIR = "flow"


@dataclass(frozen=True)
class RegionProposal:
    video_id: str
    frame: int
    region_id: int
    box: Box


@dataclass(eq=False)
class FeatureRecord:
    video_id: str
    frame: int
    region_id: int
    phi_s: np.ndarray
    phi_m: np.ndarray

    @property
    def fused(self) -> np.ndarray:
        return fuse(self.phi_s, self.phi_m)

    def __eq__(self, other):
        if not isinstance(other, FeatureRecord):
            return NotImplemented
        return (
            (self.video_id, self.frame, self.region_id) == (other.video_id, other.frame, other.region_id)
            and np.array_equal(self.phi_s, other.phi_s)
            and np.array_equal(self.phi_m, other.phi_m)
        )


@dataclass(frozen=True)
class GroundTruthTrack:
    video_id: str
    track_id: int
    action: str
    boxes: Tuple[Tuple[int, Box], ...]

    def box_at(self, frame: int):
        for f, b in self.boxes:
            if f == frame:
                return b
        return None


@dataclass
class Corpus:
    actions: List[str]
    frame_counts: Dict[str, int] = field(default_factory=dict)
    proposals: Dict[Tuple[str, int], List[RegionProposal]] = field(default_factory=dict)
    features: Dict[Tuple[str, int, int], FeatureRecord] = field(default_factory=dict)
    flow: Dict[Tuple[str, int], FlowMagnitudeMap] = field(default_factory=dict)
    tracks: List[GroundTruthTrack] = field(default_factory=list)

    @property
    def videos(self) -> List[str]:
        return sorted(self.frame_counts)

    @property
    def feature_dims(self):
        """(Ds, Dm) shared by every feature record, or None for a corpus without features."""
        for rec in self.features.values():
            return len(rec.phi_s), len(rec.phi_m)
        return None

    def frame_proposals(self, video_id: str, frame: int) -> List[RegionProposal]:
        return self.proposals.get((video_id, frame), [])

    def fused_feature(self, video_id: str, frame: int, region_id: int) -> np.ndarray:
        return self.features[(video_id, frame, region_id)].fused

    def tracks_for(self, video_id: str, action: str | None = None) -> List[GroundTruthTrack]:
        return [t for t in self.tracks if t.video_id == video_id and (action is None or t.action == action)]

    def gt_boxes(self, video_id: str, frame: int, action: str | None = None) -> List[Box]:
        out = []
        for t in self.tracks_for(video_id, action):
            b = t.box_at(frame)
            if b is not None:
                out.append(b)
        return out

    def video_label(self, video_id: str):
        """Action of the video's first ground-truth track, or None when unannotated."""
        tracks = self.tracks_for(video_id)
        return tracks[0].action if tracks else None


# ---------------------------------------------------------------------------
# low-level helpers


def fmt_float(x) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise InvalidInputError(f"refusing to serialize non-finite value {x}")
    return repr(x)


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _lines(rows: Sequence[Sequence[str]]) -> str:
    return "".join("\t".join(r) + "\n" for r in rows)


def iter_records(path) -> Iterator[Tuple[int, List[str]]]:
    """Yield (1-based line number, tab-split fields) for each line of a text artifact."""
    path = Path(path)
    try:
        text = path.read_bytes().decode("utf-8")
    except FileNotFoundError:
        raise LoadError(path, "file not found") from None
    except UnicodeDecodeError as exc:
        raise ParseError(path, f"not valid UTF-8 ({exc.reason})", offset=exc.start) from None
    if not text:
        return
    lines = text.split("\n")
    if lines[-1] != "":
        raise ParseError(path, "truncated final line (missing newline)", line=len(lines))
    for lineno, line in enumerate(lines[:-1], start=1):
        if not line.strip():
            raise ParseError(path, "blank line", line=lineno)
        yield lineno, line.split("\t")


def _int(path, lineno, s, what, minimum=0) -> int:
    try:
        v = int(s)
    except ValueError:
        raise ParseError(path, f"{what}: expected an integer, got {s!r}", line=lineno) from None
    if v < minimum:
        raise ParseError(path, f"{what}: must be >= {minimum}, got {v}", line=lineno)
    return v


def _float(path, lineno, s, what) -> float:
    try:
        v = float(s)
    except ValueError:
        raise ParseError(path, f"{what}: expected a number, got {s!r}", line=lineno) from None
    if not math.isfinite(v):
        raise ParseError(path, f"{what}: non-finite value {s!r}", line=lineno)
    return v


def _box(path, lineno, fields, what="box") -> Box:
    coords = [_float(path, lineno, s, what) for s in fields]
    try:
        return Box(*coords)
    except InvalidInputError as exc:
        raise ParseError(path, str(exc), line=lineno) from None


def _need(path, lineno, fields, n, what):
    if len(fields) != n:
        raise ParseError(path, f"{what}: expected {n} fields, got {len(fields)}", line=lineno)


# ---------------------------------------------------------------------------
# flow maps


def write_flow(flow: FlowMagnitudeMap, path) -> None:
    body = np.ascontiguousarray(flow.values, dtype="<f4").tobytes()
    atomic_write_bytes(path, _FLOW_HEADER.pack(FLOW_MAGIC, flow.width, flow.height) + body)


def read_flow(path) -> FlowMagnitudeMap:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise LoadError(path, "file not found") from None
    if len(data) < _FLOW_HEADER.size:
        raise ParseError(path, "file shorter than the 12-byte header", offset=len(data))
    magic, width, height = _FLOW_HEADER.unpack_from(data)
    if magic != FLOW_MAGIC:
        raise ParseError(path, f"bad magic {magic!r}", offset=0)
    expected = _FLOW_HEADER.size + 4 * width * height
    if len(data) != expected:
        raise ParseError(path, f"expected {expected} bytes for {width}x{height}, got {len(data)}", offset=len(data))
    values = np.frombuffer(data, dtype="<f4", offset=_FLOW_HEADER.size).astype(np.float32).reshape(height, width)
    try:
        return FlowMagnitudeMap(width, height, values)
    except InvalidInputError as exc:
        raise ParseError(path, str(exc), offset=_FLOW_HEADER.size) from None


# ---------------------------------------------------------------------------
# corpus


def load_corpus(root) -> Corpus:
    """Load and cross-validate a corpus directory."""
    root = Path(root)
    if not root.is_dir():
        raise LoadError(root, "corpus root is not a directory")

    actions_path = root / ACTIONS_FILE
    actions: List[str] = []
    for lineno, fields in iter_records(actions_path):
        label = "\t".join(fields)
        if label != label.strip() or "\t" in label:
            raise ParseError(actions_path, f"invalid action label {label!r}", line=lineno)
        if label in actions:
            raise ParseError(actions_path, f"duplicate action {label!r}", line=lineno)
        actions.append(label)
    vocab = set(actions)

    corpus = Corpus(actions=actions)
    _load_flow(root / FLOW_DIR, corpus)

    path = root / PROPOSALS_FILE
    proposals: Dict[Tuple[str, int], Dict[int, RegionProposal]] = defaultdict(dict)
    for lineno, f in iter_records(path):
        _need(path, lineno, f, 7, "proposal")
        video, frame, rid = f[0], _int(path, lineno, f[1], "frame"), _int(path, lineno, f[2], "region_id")
        _check_frame(corpus, path, lineno, video, frame)
        if rid in proposals[(video, frame)]:
            raise ParseError(path, f"duplicate region_id {rid} in {video} frame {frame}", line=lineno)
        proposals[(video, frame)][rid] = RegionProposal(video, frame, rid, _box(path, lineno, f[3:7]))
    for key in sorted(proposals):
        corpus.proposals[key] = [proposals[key][r] for r in sorted(proposals[key])]

    path = root / FEATURES_FILE
    dims = None
    records = {}
    for lineno, f in iter_records(path):
        if len(f) < 5:
            raise ParseError(path, f"feature: expected at least 5 fields, got {len(f)}", line=lineno)
        video, frame, rid = f[0], _int(path, lineno, f[1], "frame"), _int(path, lineno, f[2], "region_id")
        ds, dm = _int(path, lineno, f[3], "Ds"), _int(path, lineno, f[4], "Dm")
        if dims is None:
            dims = (ds, dm)
        elif (ds, dm) != dims:
            raise ParseError(path, f"feature dimensions {(ds, dm)} differ from corpus dimensions {dims}", line=lineno)
        _need(path, lineno, f, 5 + ds + dm, "feature")
        if rid not in proposals.get((video, frame), {}):
            raise ParseError(path, f"feature references absent proposal {video}/{frame}/{rid}", line=lineno)
        key = (video, frame, rid)
        if key in records:
            raise ParseError(path, f"duplicate feature record {video}/{frame}/{rid}", line=lineno)
        vec = np.array([_float(path, lineno, s, "feature value") for s in f[5:]], dtype=np.float64)
        records[key] = FeatureRecord(video, frame, rid, vec[:ds], vec[ds:])
    for key in sorted(records):
        corpus.features[key] = records[key]

    path = root / GROUNDTRUTH_FILE
    tracks: Dict[Tuple[str, int], dict] = {}
    for lineno, f in iter_records(path):
        _need(path, lineno, f, 8, "ground truth")
        video, tid, action = f[0], _int(path, lineno, f[1], "track_id"), f[2]
        frame = _int(path, lineno, f[3], "frame")
        if action not in vocab:
            raise ParseError(path, f"action {action!r} not in actions.txt", line=lineno)
        _check_frame(corpus, path, lineno, video, frame)
        entry = tracks.setdefault((video, tid), {"action": action, "boxes": {}})
        if entry["action"] != action:
            raise ParseError(path, f"track {video}/{tid} changes action to {action!r}", line=lineno)
        if frame in entry["boxes"]:
            raise ParseError(path, f"track {video}/{tid} has two boxes at frame {frame}", line=lineno)
        entry["boxes"][frame] = _box(path, lineno, f[4:8])
    for (video, tid) in sorted(tracks):
        entry = tracks[(video, tid)]
        boxes = tuple((fr, entry["boxes"][fr]) for fr in sorted(entry["boxes"]))
        corpus.tracks.append(GroundTruthTrack(video, tid, entry["action"], boxes))
    return corpus


def _check_frame(corpus: Corpus, path, lineno, video, frame):
    if video not in corpus.frame_counts:
        raise ParseError(path, f"video {video!r} has no flow maps under {FLOW_DIR}/", line=lineno)
    if frame >= corpus.frame_counts[video]:
        raise ParseError(
            path, f"frame {frame} out of range for video {video!r} ({corpus.frame_counts[video]} frames)", line=lineno
        )


def _load_flow(flow_root: Path, corpus: Corpus) -> None:
    if not flow_root.exists():
        return
    for vdir in sorted(p for p in flow_root.iterdir()):
        if not vdir.is_dir():
            raise LoadError(vdir, "unexpected file in flow directory")
        frames = {}
        for fpath in vdir.iterdir():
            if fpath.suffix != ".flm" or not fpath.stem.isdigit():
                raise LoadError(fpath, "flow files must be named <frame>.flm")
            frames[int(fpath.stem)] = fpath
        if not frames:
            continue
        count = len(frames)
        if sorted(frames) != list(range(count)):
            missing = sorted(set(range(max(frames) + 1)) - set(frames))
            raise LoadError(vdir, f"flow frames are not dense 0..T-1; missing {missing[:5]}")
        corpus.frame_counts[vdir.name] = count
        for fr in range(count):
            corpus.flow[(vdir.name, fr)] = read_flow(frames[fr])


def write_corpus(corpus: Corpus, root) -> None:
    """Write ``corpus`` in canonical order (videos sorted, frames and ids ascending)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    atomic_write_text(root / ACTIONS_FILE, "".join(a + "\n" for a in corpus.actions))

    rows = []
    for key in sorted(corpus.proposals):
        for p in sorted(corpus.proposals[key], key=lambda p: p.region_id):
            rows.append([p.video_id, str(p.frame), str(p.region_id), *map(fmt_float, p.box.as_tuple())])
    atomic_write_text(root / PROPOSALS_FILE, _lines(rows))

    rows = []
    for key in sorted(corpus.features):
        r = corpus.features[key]
        rows.append(
            [r.video_id, str(r.frame), str(r.region_id), str(len(r.phi_s)), str(len(r.phi_m))]
            + [fmt_float(x) for x in r.phi_s]
            + [fmt_float(x) for x in r.phi_m]
        )
    atomic_write_text(root / FEATURES_FILE, _lines(rows))

    rows = []
    for t in sorted(corpus.tracks, key=lambda t: (t.video_id, t.track_id)):
        for fr, b in t.boxes:
            rows.append([t.video_id, str(t.track_id), t.action, str(fr), *map(fmt_float, b.as_tuple())])
    atomic_write_text(root / GROUNDTRUTH_FILE, _lines(rows))

    for (video, fr), flow in sorted(corpus.flow.items()):
        write_flow(flow, root / FLOW_DIR / video / f"{fr}.flm")


# ---------------------------------------------------------------------------
# models


def write_models(models: Sequence[ActionModel], path) -> None:
    rows = []
    for m in models:
        rows.append([m.action, str(len(m.w)), fmt_float(m.b), *map(fmt_float, m.w)])
    atomic_write_text(path, _lines(rows))


def read_models(path) -> List[ActionModel]:
    models = []
    seen = set()
    for lineno, f in iter_records(path):
        if len(f) < 3:
            raise ParseError(path, f"model: expected at least 3 fields, got {len(f)}", line=lineno)
        action, dim = f[0], _int(path, lineno, f[1], "dim")
        if len(f) != 3 + dim:
            raise ParseError(path, f"model {action!r} declares dim {dim} but has {len(f) - 3} weights", line=lineno)
        if action in seen:
            raise ParseError(path, f"duplicate model for action {action!r}", line=lineno)
        seen.add(action)
        b = _float(path, lineno, f[2], "bias")
        w = np.array([_float(path, lineno, s, "weight") for s in f[3:]], dtype=np.float64)
        models.append(ActionModel(action, w, b))
    return models


# ---------------------------------------------------------------------------
# tubes


def write_tubes(tubes: Sequence[ActionTube], path) -> None:
    rows = []
    for t in tubes:
        row = [t.video_id, t.action, fmt_float(t.score), str(len(t.regions))]
        for fr, b in t.regions:
            row += [str(fr), *map(fmt_float, b.as_tuple())]
        rows.append(row)
    atomic_write_text(path, _lines(rows))


def read_tubes(path) -> List[ActionTube]:
    tubes = []
    for lineno, f in iter_records(path):
        if len(f) < 4:
            raise ParseError(path, f"tube: expected at least 4 fields, got {len(f)}", line=lineno)
        video, action = f[0], f[1]
        score = _float(path, lineno, f[2], "score")
        n = _int(path, lineno, f[3], "T", minimum=1)
        _need(path, lineno, f, 4 + 5 * n, "tube")
        regions = []
        for k in range(n):
            chunk = f[4 + 5 * k: 9 + 5 * k]
            fr = _int(path, lineno, chunk[0], "frame")
            if fr != k:
                raise ParseError(path, f"tube frames must be consecutive from 0; got {fr} at position {k}", line=lineno)
            regions.append((fr, _box(path, lineno, chunk[1:])))
        tubes.append(ActionTube(video, action, tuple(regions), score))
    return tubes


# ---------------------------------------------------------------------------
# stage outputs: saliency table, score table, labels, metrics


@dataclass(frozen=True)
class SaliencyRow:
    video_id: str
    frame: int
    region_id: int
    score: float
    retained: bool


def write_saliency(rows: Sequence[SaliencyRow], path) -> None:
    atomic_write_text(
        path,
        _lines([[r.video_id, str(r.frame), str(r.region_id), fmt_float(r.score), "1" if r.retained else "0"] for r in rows]),
    )


def read_saliency(path) -> List[SaliencyRow]:
    out = []
    for lineno, f in iter_records(path):
        _need(path, lineno, f, 5, "saliency")
        if f[4] not in ("0", "1"):
            raise ParseError(path, f"retained flag must be 0 or 1, got {f[4]!r}", line=lineno)
        out.append(
            SaliencyRow(f[0], _int(path, lineno, f[1], "frame"), _int(path, lineno, f[2], "region_id"),
                        _float(path, lineno, f[3], "score"), f[4] == "1")
        )
    return out


def write_saliency_report(report: SaliencyReport, path) -> None:
    rows = [
        ["alpha", fmt_float(report.alpha)],
        ["total_count", str(report.total_count)],
        ["retained_count", str(report.retained_count)],
        ["discard_fraction", fmt_float(report.discard_fraction)],
    ]
    atomic_write_text(path, _lines(rows))


def read_saliency_report(path) -> SaliencyReport:
    values = {}
    for lineno, f in iter_records(path):
        _need(path, lineno, f, 2, "report")
        values[f[0]] = (lineno, f[1])
    try:
        return SaliencyReport(
            _int(path, values["total_count"][0], values["total_count"][1], "total_count"),
            _int(path, values["retained_count"][0], values["retained_count"][1], "retained_count"),
            _float(path, values["alpha"][0], values["alpha"][1], "alpha"),
        )
    except KeyError as exc:
        raise ParseError(path, f"missing key {exc.args[0]}") from None


@dataclass(frozen=True)
class ScoreRow:
    video_id: str
    frame: int
    region_id: int
    action: str
    score: float


def write_scores(rows: Sequence[ScoreRow], path) -> None:
    atomic_write_text(
        path, _lines([[r.video_id, str(r.frame), str(r.region_id), r.action, fmt_float(r.score)] for r in rows])
    )


def read_scores(path) -> List[ScoreRow]:
    out = []
    for lineno, f in iter_records(path):
        _need(path, lineno, f, 5, "score")
        out.append(
            ScoreRow(f[0], _int(path, lineno, f[1], "frame"), _int(path, lineno, f[2], "region_id"), f[3],
                     _float(path, lineno, f[4], "score"))
        )
    return out


def write_labels(labels: Mapping[str, str], path) -> None:
    atomic_write_text(path, _lines([[v, labels[v]] for v in sorted(labels)]))


def read_labels(path) -> Dict[str, str]:
    out = {}
    for lineno, f in iter_records(path):
        _need(path, lineno, f, 2, "label")
        if f[0] in out:
            raise ParseError(path, f"duplicate video {f[0]!r}", line=lineno)
        out[f[0]] = f[1]
    return out


@dataclass(frozen=True)
class MetricRow:
    metric: str
    cls: str
    sigma: str
    value: float


def write_metrics(rows: Sequence[MetricRow], path) -> None:
    # NaN marks a metric that is undefined for the class (no ground truth).
    out = []
    for r in rows:
        value = "nan" if math.isnan(r.value) else fmt_float(r.value)
        out.append([r.metric, r.cls, r.sigma, value])
    atomic_write_text(path, _lines(out))


def read_metrics(path) -> List[MetricRow]:
    out = []
    for lineno, f in iter_records(path):
        _need(path, lineno, f, 4, "metric")
        value = math.nan if f[3] == "nan" else _float(path, lineno, f[3], "value")
        out.append(MetricRow(f[0], f[1], f[2], value))
    return out
