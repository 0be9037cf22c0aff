import filecmp
import random
import shutil
from pathlib import Path

import numpy as np
import pytest

from tubekit import Box, LoadError, ParseError
from tubekit.classifier import ActionModel
from tubekit.corpus_io import (
    Corpus, FeatureRecord, GroundTruthTrack, RegionProposal, load_corpus, read_flow, read_models, read_tubes,
    write_corpus, write_flow, write_models, write_tubes,
)
from tubekit.linker import ActionTube
from tubekit.saliency import FlowMagnitudeMap


def tree_equal(a: Path, b: Path) -> bool:
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    if mismatch or errors:
        return False
    return all(tree_equal(a / d, b / d) for d in cmp.common_dirs)


def write_empty(root: Path, actions=("run",)):
    root.mkdir(parents=True, exist_ok=True)
    (root / "actions.txt").write_text("".join(a + "\n" for a in actions))
    for name in ("proposals.tsv", "features.tsv", "groundtruth.tsv"):
        (root / name).write_text("")


def tiny_corpus():
    c = Corpus(actions=["run", "walk"])
    c.frame_counts["v0"] = 1
    c.flow[("v0", 0)] = FlowMagnitudeMap(1, 1, np.array([[0.5]], dtype=np.float32))
    c.proposals[("v0", 0)] = [RegionProposal("v0", 0, 0, Box(0.0, 0.0, 1.0, 1.0))]
    c.features[("v0", 0, 0)] = FeatureRecord("v0", 0, 0, np.array([0.1, -2.5]), np.array([1e-300]))
    c.tracks.append(GroundTruthTrack("v0", 0, "walk", ((0, Box(0.0, 0.0, 1.0, 1.0)),)))
    return c


def test_empty_corpus(tmp_path):
    write_empty(tmp_path)
    c = load_corpus(tmp_path)
    assert c.videos == [] and c.actions == ["run"] and c.feature_dims is None


def test_missing_file_named(tmp_path):
    write_empty(tmp_path)
    (tmp_path / "features.tsv").unlink()
    with pytest.raises(LoadError, match="features.tsv"):
        load_corpus(tmp_path)


def test_tiny_corpus_round_trip(tmp_path):
    c = tiny_corpus()
    write_corpus(c, tmp_path / "a")
    loaded = load_corpus(tmp_path / "a")
    assert loaded == c
    write_corpus(loaded, tmp_path / "b")
    assert tree_equal(tmp_path / "a", tmp_path / "b")


def test_synth_corpus_round_trip(small_corpus_dir, tmp_path):
    c = load_corpus(small_corpus_dir)
    write_corpus(c, tmp_path / "copy")
    assert load_corpus(tmp_path / "copy") == c
    for name in ("actions.txt", "proposals.tsv", "features.tsv", "groundtruth.tsv"):
        assert (small_corpus_dir / name).read_bytes() == (tmp_path / "copy" / name).read_bytes()
    assert tree_equal(small_corpus_dir / "flow", tmp_path / "copy" / "flow")


def test_load_independent_of_line_order(small_corpus_dir, tmp_path):
    dst = tmp_path / "shuffled"
    shutil.copytree(small_corpus_dir, dst)
    rng = random.Random(5)
    for name in ("proposals.tsv", "features.tsv", "groundtruth.tsv"):
        lines = (dst / name).read_text().splitlines(keepends=True)
        rng.shuffle(lines)
        (dst / name).write_text("".join(lines))
    assert load_corpus(dst) == load_corpus(small_corpus_dir)


def _corrupt(tmp_path, name, text):
    write_corpus(tiny_corpus(), tmp_path)
    with open(tmp_path / name, "a") as fh:
        fh.write(text)
    return tmp_path


@pytest.mark.parametrize("name,text,match", [
    ("features.tsv", "v0\t0\t7\t2\t1\t0\t0\t0\n", "absent proposal"),
    ("features.tsv", "v0\t0\t0\t2\t1\t0\t0\t0\n", "duplicate feature"),
    ("proposals.tsv", "v0\t0\t0\t0\t0\t1\t1\n", "duplicate region_id"),
    ("proposals.tsv", "v0\t0\t1\t0\t0\t0\t1\n", "degenerate"),
    ("proposals.tsv", "v0\t3\t1\t0\t0\t1\t1\n", "out of range"),
    ("proposals.tsv", "v9\t0\t1\t0\t0\t1\t1\n", "no flow maps"),
    ("groundtruth.tsv", "v0\t1\tjump\t0\t0\t0\t1\t1\n", "not in actions"),
    ("groundtruth.tsv", "v0\t0\trun\t0\t0\t0\t1\t1\n", "changes action"),
    ("proposals.tsv", "v0\t0\t1\t0\t0\t1", "truncated"),
])
def test_corrupt_corpus_rejected_with_line(tmp_path, name, text, match):
    root = _corrupt(tmp_path, name, text)
    with pytest.raises(ParseError, match=match) as info:
        load_corpus(root)
    assert info.value.path.endswith(name)
    assert info.value.line == 2


def test_feature_dimension_mismatch(tmp_path):
    c = tiny_corpus()
    c.proposals[("v0", 0)].append(RegionProposal("v0", 0, 1, Box(0.0, 0.0, 1.0, 1.0)))
    write_corpus(c, tmp_path)
    with open(tmp_path / "features.tsv", "a") as fh:
        fh.write("v0\t0\t1\t1\t1\t0\t0\n")
    with pytest.raises(ParseError, match="differ"):
        load_corpus(tmp_path)


def test_flow_frames_must_be_dense(tmp_path):
    write_corpus(tiny_corpus(), tmp_path)
    shutil.copy(tmp_path / "flow" / "v0" / "0.flm", tmp_path / "flow" / "v0" / "2.flm")
    with pytest.raises(LoadError, match="dense"):
        load_corpus(tmp_path)


def test_flow_binary_layout(tmp_path):
    m = FlowMagnitudeMap(3, 2, np.arange(6, dtype=np.float32).reshape(2, 3))
    write_flow(m, tmp_path / "x.flm")
    raw = (tmp_path / "x.flm").read_bytes()
    assert raw[:4] == b"FLM1"
    assert raw[4:12] == (3).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert np.frombuffer(raw[12:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]
    assert read_flow(tmp_path / "x.flm") == m


def test_one_by_one_flow_round_trip(tmp_path):
    m = FlowMagnitudeMap(1, 1, np.array([[3.25]], dtype=np.float32))
    write_flow(m, tmp_path / "a.flm")
    write_flow(read_flow(tmp_path / "a.flm"), tmp_path / "b.flm")
    assert (tmp_path / "a.flm").read_bytes() == (tmp_path / "b.flm").read_bytes()


@pytest.mark.parametrize("mutate,match", [
    (lambda b: b"FLM2" + b[4:], "magic"),
    (lambda b: b[:-1], "expected"),
    (lambda b: b[:5], "header"),
])
def test_bad_flow_files(tmp_path, mutate, match):
    write_flow(FlowMagnitudeMap(2, 2, np.ones((2, 2), dtype=np.float32)), tmp_path / "a.flm")
    (tmp_path / "a.flm").write_bytes(mutate((tmp_path / "a.flm").read_bytes()))
    with pytest.raises(ParseError, match=match):
        read_flow(tmp_path / "a.flm")


def test_tubes_round_trip(tmp_path):
    write_tubes([], tmp_path / "t.tsv")
    assert (tmp_path / "t.tsv").read_bytes() == b""
    assert read_tubes(tmp_path / "t.tsv") == []
    tube = ActionTube("v0", "run", tuple((f, Box(f + 0.1, 2.0, f + 10.3, 7.7)) for f in range(3)), 1 / 3)
    write_tubes([tube], tmp_path / "t.tsv")
    assert len((tmp_path / "t.tsv").read_text().splitlines()) == 1
    back = read_tubes(tmp_path / "t.tsv")
    assert back == [tube] and back[0].score == 1 / 3
    write_tubes(back, tmp_path / "t2.tsv")
    assert (tmp_path / "t.tsv").read_bytes() == (tmp_path / "t2.tsv").read_bytes()


@pytest.mark.parametrize("line,match", [
    ("v0\trun\tabc\t1\t0\t0\t0\t1\t1\n", "expected a number"),
    ("v0\trun\t0.5\t2\t0\t0\t0\t1\t1\n", "expected 14 fields"),
    ("v0\trun\t0.5\t1\t1\t0\t0\t1\t1\n", "consecutive"),
])
def test_bad_tube_lines(tmp_path, line, match):
    (tmp_path / "t.tsv").write_text("v0\trun\t1.0\t1\t0\t0\t0\t1\t1\n" + line)
    with pytest.raises(ParseError, match=match) as info:
        read_tubes(tmp_path / "t.tsv")
    assert info.value.line == 2


def test_models_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    models = [ActionModel("zero", np.zeros(4), 0.0), ActionModel("rand", rng.standard_normal(16), rng.standard_normal())]
    write_models(models, tmp_path / "m.tsv")
    back = read_models(tmp_path / "m.tsv")
    assert back == models
    assert back[1].w.tobytes() == models[1].w.tobytes()
    write_models(back, tmp_path / "m2.tsv")
    assert (tmp_path / "m.tsv").read_bytes() == (tmp_path / "m2.tsv").read_bytes()


def test_models_parse_errors(tmp_path):
    write_models([ActionModel("a", np.arange(16.0), 1.0)], tmp_path / "m.tsv")
    raw = (tmp_path / "m.tsv").read_bytes()
    (tmp_path / "m.tsv").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(ParseError, match="truncated"):
        read_models(tmp_path / "m.tsv")
    (tmp_path / "m.tsv").write_text("a\t3\t0.0\t1.0\t2.0\n")
    with pytest.raises(ParseError, match="declares dim 3"):
        read_models(tmp_path / "m.tsv")
