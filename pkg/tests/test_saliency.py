import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tubekit import Box, InvalidInputError
from tubekit.corpus_io import RegionProposal
from tubekit.saliency import FlowMagnitudeMap, filter_regions, normalize, region_motion_score

from oracles import pixel_mean


def fmap(values):
    values = np.asarray(values, dtype=np.float64)
    return FlowMagnitudeMap(values.shape[1], values.shape[0], values)


def props(*boxes, video="v", frame=0):
    return [RegionProposal(video, frame, i, Box(*b)) for i, b in enumerate(boxes)]


def test_normalize_examples():
    assert np.array_equal(normalize(fmap(np.zeros((3, 4)))).values, np.zeros((3, 4)))
    assert np.array_equal(normalize(fmap(np.full((2, 2), 7.0))).values, np.ones((2, 2)))
    assert np.array_equal(normalize(fmap([[1.0, 2.0, 4.0]])).values, np.array([[0.25, 0.5, 1.0]]))


@pytest.mark.parametrize("bad", [np.nan, np.inf, -1.0])
def test_invalid_map_values_rejected(bad):
    with pytest.raises(InvalidInputError):
        fmap([[1.0, bad]])


def test_map_size_mismatch_rejected():
    with pytest.raises(InvalidInputError):
        FlowMagnitudeMap(3, 3, np.zeros(8))


@given(arrays(np.float64, (4, 5), elements=st.floats(0, 1e6)))
def test_normalize_idempotent(values):
    once = normalize(fmap(values))
    assert np.array_equal(normalize(once).values, once.values)


def test_region_score_examples():
    assert region_motion_score(fmap(np.full((20, 20), 0.8)), Box(3, 4, 11, 9)) == pytest.approx(0.8)
    patch = np.zeros((30, 30))
    patch[5:15, 10:20] = 1.0
    m = fmap(patch)
    assert region_motion_score(m, Box(10, 5, 20, 15)) == 1.0
    # half over the patch, half over zeros
    assert region_motion_score(m, Box(15, 5, 25, 15)) == 0.5


def test_region_score_clips_to_map():
    m = fmap(np.ones((10, 10)))
    assert region_motion_score(m, Box(-50, -50, 3, 3)) == 1.0
    with pytest.raises(InvalidInputError):
        region_motion_score(m, Box(20, 20, 30, 30))
    with pytest.raises(InvalidInputError):
        region_motion_score(m, Box(2.6, 2.6, 3.4, 3.4))  # contains no pixel center


@settings(max_examples=60)
@given(arrays(np.float64, (9, 11), elements=st.floats(0, 1)),
       st.floats(-3, 12), st.floats(-3, 10), st.floats(1.2, 14), st.floats(1.2, 12))
def test_region_score_matches_pixel_loop(values, x, y, w, h):
    m = fmap(values)
    box = (x, y, x + w, y + h)
    try:
        expected = pixel_mean(values, box)
    except ZeroDivisionError:
        with pytest.raises(InvalidInputError):
            region_motion_score(m, Box(*box))
        return
    assert region_motion_score(m, Box(*box)) == pytest.approx(expected, rel=1e-12, abs=1e-12)


@given(arrays(np.float64, (6, 7), elements=st.floats(0, 100)))
def test_full_map_region_is_global_mean(values):
    norm = normalize(fmap(values))
    assert region_motion_score(norm, Box(0, 0, 7, 6)) == pytest.approx(norm.values.mean(), abs=1e-12)


def test_filter_threshold_is_inclusive():
    # columns hold motion 0.2, 0.3, 0.9 (already max-normalized by the 1.0 column)
    values = np.zeros((4, 4))
    values[:, 0], values[:, 1], values[:, 2], values[:, 3] = 0.2, 0.3, 0.9, 1.0
    ps = props((0, 0, 1, 4), (1, 0, 2, 4), (2, 0, 3, 4))
    kept, report = filter_regions(ps, fmap(values), alpha=0.3)
    assert [p.region_id for p in kept] == [1, 2]
    assert (report.total_count, report.retained_count) == (3, 2)
    assert report.discard_fraction == pytest.approx(1 / 3)


def test_filter_alpha_bounds():
    values = np.zeros((4, 4))
    values[0, 0] = 1.0
    ps = props((0, 0, 1, 1), (0, 0, 4, 4), (2, 2, 4, 4))
    kept, report = filter_regions(ps, fmap(values), alpha=0.0)
    assert kept == ps and report.discard_fraction == 0.0
    kept, _ = filter_regions(ps, fmap(values), alpha=1.0)
    assert [p.region_id for p in kept] == [0]
    with pytest.raises(InvalidInputError):
        filter_regions(ps, fmap(values), alpha=1.0 + 1e-9)
    with pytest.raises(InvalidInputError):
        filter_regions(ps, fmap(values), alpha=-0.1)


def test_filter_rejects_mixed_frames():
    ps = props((0, 0, 2, 2)) + props((0, 0, 2, 2), frame=1)
    with pytest.raises(InvalidInputError):
        filter_regions(ps, fmap(np.ones((4, 4))), 0.3)


def test_empty_frame_report():
    kept, report = filter_regions([], fmap(np.ones((2, 2))), 0.3)
    assert kept == [] and report.total_count == 0 and report.discard_fraction == 0.0


@settings(max_examples=40)
@given(arrays(np.float64, (8, 8), elements=st.floats(0, 5)),
       st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6), st.integers(1, 4), st.integers(1, 4)),
                min_size=1, max_size=10),
       st.floats(0, 1), st.floats(0, 1))
def test_filter_monotone_and_order_preserving(values, specs, a1, a2):
    lo, hi = sorted((a1, a2))
    ps = props(*[(x, y, x + w, y + h) for x, y, w, h in specs])
    kept_lo, _ = filter_regions(ps, fmap(values), lo)
    kept_hi, _ = filter_regions(ps, fmap(values), hi)
    ids_lo = [p.region_id for p in kept_lo]
    ids_hi = [p.region_id for p in kept_hi]
    assert set(ids_hi) <= set(ids_lo)
    assert ids_lo == sorted(ids_lo) and ids_hi == sorted(ids_hi)
    assert all(p in ps for p in kept_lo)
