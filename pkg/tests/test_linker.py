import numpy as np
import pytest

from tubekit import Box, InvalidInputError, NoFeasiblePathError
from tubekit.linker import (
    ActionTube, LinkConfig, ScoredRegion, best_path, classify_video, extract_tubes, link_score, path_score,
)

from oracles import box_iou, enumerate_paths, random_frames


def to_regions(frames):
    return [[ScoredRegion(rid, t, Box(*box), u) for rid, box, u in regs] for t, regs in enumerate(frames)]


def sr(rid, frame, box, unary):
    return ScoredRegion(rid, frame, Box(*box), unary)


def test_link_score_examples():
    a, b = sr(0, 0, (0, 0, 10, 10), 0.0), sr(0, 1, (0, 0, 10, 10), 0.0)
    assert link_score(a, b, 0.0) == 0.0
    assert link_score(a, b, 2.0) == 2.0
    c, d = sr(0, 0, (0, 0, 10, 10), 1.0), sr(0, 1, (5, 0, 15, 10), -0.5)
    assert link_score(c, d, 1.0) == pytest.approx(0.5 + 1 / 3, abs=1e-12)
    with pytest.raises(InvalidInputError):
        link_score(a, sr(0, 2, (0, 0, 1, 1), 0.0), 1.0)


def test_single_frame_picks_max_unary():
    frames = [[sr(3, 0, (0, 0, 1, 1), 0.2), sr(1, 0, (0, 0, 2, 2), 0.9), sr(2, 0, (0, 0, 3, 3), 0.9)]]
    path, score = best_path(frames)
    assert path[0].region_id == 1 and score == 0.9


def test_unique_path():
    frames = [[sr(0, t, (t, 0, t + 10, 10), 0.1 * t)] for t in range(4)]
    path, score = best_path(frames, 1.0)
    expected = sum(link_score(frames[t][0], frames[t + 1][0], 1.0) for t in range(3)) / 4
    assert [r.frame for r in path] == [0, 1, 2, 3]
    assert score == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_best_path_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    frames = random_frames(rng, 3, 3)
    lam = float(rng.uniform(0, 3))
    ids, score = enumerate_paths(frames, lam)
    path, got = best_path(to_regions(frames), lam)
    assert tuple(r.region_id for r in path) == ids
    assert got == pytest.approx(score, abs=1e-9)


def test_tie_break_lowest_region_id():
    box = (0, 0, 10, 10)
    frames = [[sr(5, 0, box, 1.0), sr(2, 0, box, 1.0)], [sr(9, 1, box, 0.0), sr(4, 1, box, 0.0)]]
    path, _ = best_path(frames)
    assert [r.region_id for r in path] == [2, 4]


def test_empty_frame_errors():
    with pytest.raises(NoFeasiblePathError):
        best_path([[sr(0, 0, (0, 0, 1, 1), 0.0)], []])
    with pytest.raises(NoFeasiblePathError):
        best_path([])
    with pytest.raises(NoFeasiblePathError):
        extract_tubes([[], [sr(0, 1, (0, 0, 1, 1), 0.0)]], "a")


def test_extract_one_region_per_frame():
    frames = [[sr(0, t, (0, 0, 5, 5), 1.0)] for t in range(3)]
    tubes = extract_tubes(frames, "run", LinkConfig(max_tubes=3), video_id="v")
    assert len(tubes) == 1
    assert [f for f, _ in tubes[0].regions] == [0, 1, 2]


@pytest.mark.parametrize("seed", range(10))
def test_extract_two_per_frame(seed):
    rng = np.random.default_rng(100 + seed)
    frames = [regs[:2] for regs in random_frames(rng, 4, 4)]
    frames = [regs if len(regs) == 2 else regs + [(99, (1, 1, 9, 9), 0.0)] for regs in frames]
    tubes = extract_tubes(to_regions(frames), "a", LinkConfig(lam=1.0, max_tubes=3))
    assert len(tubes) == 2
    first_ids, _ = enumerate_paths(frames, 1.0)
    remaining = [[r for r in regs if r[0] != first_ids[t]] for t, regs in enumerate(frames)]
    ids2, s2 = enumerate_paths(remaining, 1.0)
    assert tubes[1].score == pytest.approx(s2, abs=1e-9)
    assert tubes[0].score >= tubes[1].score


@pytest.mark.parametrize("seed", range(25))
def test_extraction_scores_non_increasing(seed):
    rng = np.random.default_rng(seed)
    tubes = extract_tubes(to_regions(random_frames(rng, 5, 4)), "a", LinkConfig(max_tubes=4))
    assert all(len(t.regions) == 5 for t in tubes)
    assert all(a.score >= b.score for a, b in zip(tubes, tubes[1:]))


@pytest.mark.parametrize("seed", range(20))
def test_lambda_linearity(seed):
    rng = np.random.default_rng(seed)
    path = [regs[0] for regs in to_regions(random_frames(rng, int(rng.integers(2, 7)), 1))]
    T = len(path)
    iou_mean = sum(box_iou(a.box.as_tuple(), b.box.as_tuple()) for a, b in zip(path, path[1:])) / T
    for lam in (0.5, 1.0, 4.0):
        assert path_score(path, lam) == pytest.approx(path_score(path, 0.0) + lam * iou_mean, abs=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_unary_shift(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(2, 6))
    frames = random_frames(rng, T, 4)
    c = float(rng.normal() * 3)
    shifted = [[(rid, box, u + c) for rid, box, u in regs] for regs in frames]
    p0, s0 = best_path(to_regions(frames), 1.0)
    p1, s1 = best_path(to_regions(shifted), 1.0)
    assert [r.region_id for r in p0] == [r.region_id for r in p1]
    assert s1 - s0 == pytest.approx(2 * c * (T - 1) / T, abs=1e-9)


def tube(action, score, video="v"):
    return ActionTube(video, action, ((0, Box(0, 0, 1, 1)),), score)


def test_classify_video():
    assert classify_video([tube("run", 0.5), tube("walk", 0.9)]) == "walk"
    assert classify_video([tube("run", -3.0)]) == "run"
    ts = [tube("run", 0.5), tube("walk", 0.9), tube("jump", 0.1)]
    assert classify_video([tube(t.action, t.score + 17.0) for t in ts]) == "walk"
    assert classify_video([tube("walk", 1.0), tube("run", 1.0)], ["run", "walk"]) == "run"
    with pytest.raises(InvalidInputError):
        classify_video([])
    with pytest.raises(InvalidInputError):
        classify_video([tube("swim", 1.0)], ["run"])


def test_tube_validation():
    with pytest.raises(InvalidInputError):
        ActionTube("v", "a", ((1, Box(0, 0, 1, 1)),), 0.0)
    with pytest.raises(InvalidInputError):
        ActionTube("v", "a", ((0, Box(0, 0, 1, 1)),), float("inf"))
    with pytest.raises(InvalidInputError):
        LinkConfig(lam=-1.0)
    with pytest.raises(InvalidInputError):
        LinkConfig(max_tubes=0)
