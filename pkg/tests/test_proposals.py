import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from contextcnn.boxes import Box, iou, is_sorted_by_score, pad_boxes, sort_by_score
from contextcnn.data import SceneSample, SceneSpec, generate_scene
from contextcnn.proposals import (FeasibilityError, adversarial_random_boxes, objectness_proposals,
                                  oracle_proposals, sliding_grid)

boxes_st = st.builds(lambda x, y, w, h, s: Box(x, y, x + w, y + h, s),
                     st.integers(0, 50), st.integers(0, 50), st.integers(1, 14), st.integers(1, 14),
                     st.floats(0, 1))


def test_iou_examples():
    assert iou(Box(10, 10, 30, 30), Box(32, 32, 52, 52)) == 0.0
    assert iou(Box(0, 0, 10, 10), Box(0, 0, 10, 10)) == 1.0
    assert iou(Box(0, 0, 2, 1), Box(1, 0, 3, 1)) == pytest.approx(1 / 3)


@given(boxes_st, boxes_st)
def test_iou_symmetric_and_bounded(a, b):
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0


def test_sort_contract():
    boxes = [Box(0, 0, 1, 1, s) for s in (0.9, 0.5, 0.7)]
    ranked = sort_by_score(boxes)
    assert [boxes.index(b) for b in ranked] == [0, 2, 1]


def test_sort_ties_keep_input_order():
    a, b, c = Box(0, 0, 1, 1, 0.5), Box(1, 1, 2, 2, 0.5), Box(2, 2, 3, 3, 0.9)
    assert sort_by_score([a, b, c]) == [c, a, b]


def test_pad_repeats_last_and_truncates():
    a, b = Box(0, 0, 1, 1, 0.9), Box(1, 1, 2, 2, 0.2)
    assert pad_boxes([a, b], 4) == [a, b, b, b]
    assert pad_boxes([a, b], 1) == [a]
    with pytest.raises(ValueError):
        pad_boxes([], 3)


def test_blank_image_scores_zero_in_grid_order():
    boxes = objectness_proposals(np.full((64, 64), 0.3), 10)
    assert all(b.score == 0 for b in boxes)
    grid = sliding_grid(64, 64)
    assert [b.coords() for b in boxes[:1]] == [tuple(float(v) for v in grid[0])]
    again = objectness_proposals(np.full((64, 64), 0.3), 10)
    assert boxes == again


def test_single_square_is_found():
    img = np.zeros((64, 64))
    img[20:40, 24:44] = 1.0
    top = objectness_proposals(img, 5)[0]
    assert iou(top, Box(24, 20, 44, 40)) >= 0.5


def test_objectness_sorted_in_bounds_normalized():
    for seed in range(5):
        s = generate_scene(SceneSpec(), seed % 4, seed)
        boxes = objectness_proposals(s.image, 10, 0.5)
        assert 1 <= len(boxes) <= 10 and is_sorted_by_score(boxes)
        assert boxes[0].score == 1.0
        for b in boxes:
            assert 0 <= b.x0 < b.x1 <= 64 and 0 <= b.y0 < b.y1 <= 64 and 0 <= b.score <= 1
        for i, a in enumerate(boxes):
            assert all(iou(a, b) <= 0.5 for b in boxes[i + 1:])


def test_objectness_rejects_n_zero():
    with pytest.raises(ValueError):
        objectness_proposals(np.zeros((8, 8)), 0)


def _sample():
    return generate_scene(SceneSpec(), 2, 11)


def test_oracle_zero_jitter_equals_ground_truth():
    s = _sample()
    got = oracle_proposals(s, len(s.gt_boxes))
    assert sorted(b.coords() for b in got) == sorted(b.coords() for b in s.gt_boxes)


def test_oracle_pads_and_stays_sorted():
    s = _sample()
    got = oracle_proposals(s, 10)
    assert len(got) == 10 and is_sorted_by_score(got)
    assert got[-1] == got[len(s.gt_boxes) - 1]


def test_oracle_ranked_by_mass():
    img = np.zeros((1, 32, 32), dtype=np.float32)
    img[0, 0:4, 0:4] = 0.5
    img[0, 10:20, 10:20] = 1.0
    s = SceneSample(img, 0, [Box(0, 0, 4, 4), Box(10, 10, 20, 20)])
    got = oracle_proposals(s, 2)
    assert got[0].coords() == (10, 10, 20, 20) and got[0].score == 1.0
    assert got[1].score == pytest.approx(8 / 100)


def test_oracle_jitter_deterministic_and_bounded():
    s = _sample()
    a = oracle_proposals(s, 10, jitter=0.2, rng_seed=5)
    assert a == oracle_proposals(s, 10, jitter=0.2, rng_seed=5)
    assert a != oracle_proposals(s, 10, jitter=0.2, rng_seed=6)
    for b in a:
        assert 0 <= b.x0 < b.x1 <= 64 and 0 <= b.y0 < b.y1 <= 64


def test_oracle_needs_ground_truth():
    with pytest.raises(ValueError):
        oracle_proposals(SceneSample(np.zeros((1, 8, 8)), 0, []), 3)


def test_adversarial_constraints():
    ref = [Box(10, 10, 30, 30), Box(35, 5, 55, 25)]
    boxes = adversarial_random_boxes(ref, (64, 64), 10, rng_seed=3)
    assert len(boxes) == 10 and is_sorted_by_score(boxes)
    for b in boxes:
        assert max(iou(b, r) for r in ref) < 0.10
        assert 16 <= b.width <= 24 and 16 <= b.height <= 24
        assert 0 <= b.x0 and b.x1 <= 64 and 0 <= b.y0 and b.y1 <= 64
    assert boxes == adversarial_random_boxes(ref, (64, 64), 10, rng_seed=3)


@given(st.lists(boxes_st, min_size=1, max_size=4), st.integers(0, 1000))
def test_adversarial_property(ref, seed):
    try:
        boxes = adversarial_random_boxes(ref, (64, 64), 5, rng_seed=seed, max_attempts=2000)
    except FeasibilityError:
        return
    mw = np.mean([r.width for r in ref])
    for b in boxes:
        assert all(iou(b, r) < 0.10 for r in ref)
        assert mw * 0.8 - 1e-9 <= b.width <= max(mw * 1.2 + 1e-9, np.ceil(mw * 0.8))


def test_adversarial_infeasible_reports_count():
    with pytest.raises(FeasibilityError) as info:
        adversarial_random_boxes([Box(0, 0, 64, 64)], (64, 64), 3, rng_seed=0, max_attempts=200)
    assert info.value.achieved == 0 and info.value.requested == 3
