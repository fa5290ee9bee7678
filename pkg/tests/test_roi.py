import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import all_rects, exhaustive_roi_mismatches, roi_pool_oracle

from contextcnn.boxes import Box
from contextcnn.roi import CellRect, InvalidBoxError, RoiSpec, map_box_to_feature, roi_pool, roi_pool_batch
from contextcnn.tensor import DimensionError, Tape, Tensor, mul, tsum


def test_map_whole_image_at_full_geometry():
    assert map_box_to_feature(Box(0, 0, 512, 512), 1 / 16, 32, 32) == CellRect(0, 0, 31, 31)


def test_map_unit_scale_rounds_outward():
    assert map_box_to_feature(Box(2, 3, 7, 9), 1.0, 16, 16) == CellRect(3, 2, 8, 6)
    assert map_box_to_feature(Box(2.4, 3.6, 6.2, 8.5), 1.0, 16, 16) == CellRect(3, 2, 8, 6)


def test_map_tiny_box_clamps_to_one_cell():
    assert map_box_to_feature(Box(0, 0, 8, 8), 1 / 16, 32, 32) == CellRect(0, 0, 0, 0)


def test_map_box_past_edge_is_clamped():
    assert map_box_to_feature(Box(60, 60, 70, 70), 0.25, 16, 16) == CellRect(15, 15, 15, 15)


@pytest.mark.parametrize("box", [Box(3, 3, 3, 8), Box(5, 5, 2, 9), Box(0, 4, 4, 4)])
def test_map_rejects_degenerate_boxes(box):
    with pytest.raises(InvalidBoxError):
        map_box_to_feature(box, 1.0, 8, 8)


def test_pool_4x4_quadrants():
    fmap = Tensor(np.arange(1, 17, dtype=np.float32).reshape(1, 4, 4))
    out = roi_pool(fmap, RoiSpec(Box(0, 0, 4, 4), 2, 2))
    np.testing.assert_array_equal(out.data[0], [[6, 8], [14, 16]])


def test_pooled_size_must_be_positive():
    with pytest.raises(ValueError):
        RoiSpec(Box(0, 0, 1, 1), 0, 2)


def test_pool_rank_checked():
    with pytest.raises(DimensionError):
        roi_pool(Tensor(np.zeros((4, 4))), RoiSpec(Box(0, 0, 1, 1)))


@given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 4), st.integers(1, 4), st.data())
def test_output_shape_fixed_regardless_of_box(h, w, ph, pw, data):
    x0 = data.draw(st.integers(0, w - 1))
    y0 = data.draw(st.integers(0, h - 1))
    box = Box(x0, y0, data.draw(st.integers(x0 + 1, w)), data.draw(st.integers(y0 + 1, h)))
    out = roi_pool(Tensor(np.zeros((3, h, w))), RoiSpec(box, ph, pw))
    assert out.shape == (3, ph, pw)


def test_pooled_grid_larger_than_roi_repeats_cells():
    fmap = np.arange(4, dtype=np.float32).reshape(1, 2, 2)
    out = roi_pool(Tensor(fmap), RoiSpec(Box(0, 0, 2, 2), 3, 3)).data[0]
    want, _ = roi_pool_oracle(fmap, (0, 0, 1, 1), 3, 3)
    np.testing.assert_array_equal(out, want[0])


def test_exhaustive_oracle_small_maps():
    mismatches, checked = exhaustive_roi_mismatches(max_side=5, seed=1)
    assert checked > 0 and mismatches == 0


def test_backward_routes_each_cell_to_one_argmax():
    rng = np.random.default_rng(3)
    fmap = rng.integers(0, 3, size=(2, 6, 5)).astype(np.float64)  # ties present
    feats = Tensor(fmap, requires_grad=True)
    spec = RoiSpec(Box(1, 0, 5, 6), 3, 2)
    weights = rng.standard_normal((2, 3, 2))
    with Tape() as tape:
        loss = tsum(mul(roi_pool(feats, spec), Tensor(weights)))
    tape.backward(loss)
    _, arg = roi_pool_oracle(fmap, tuple(map_box_to_feature(spec.box, 1.0, 6, 5)), 3, 2)
    want = np.zeros_like(fmap)
    for ch in range(2):
        for i in range(3):
            for j in range(2):
                want[ch].flat[arg[ch, i, j]] += weights[ch, i, j]
    np.testing.assert_allclose(feats.grad, want, rtol=0, atol=1e-15)




def test_batch_matches_single_calls():
    rng = np.random.default_rng(5)
    feats = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    boxes = [[Box(0, 0, 16, 16), Box(4, 2, 9, 13)], [Box(8, 8, 32, 32)]]
    out = roi_pool_batch(Tensor(feats), boxes, 2, 2, 0.25).data
    singles = [roi_pool(Tensor(feats[b]), RoiSpec(box, 2, 2, 0.25)).data
               for b, bl in enumerate(boxes) for box in bl]
    np.testing.assert_array_equal(out, np.stack(singles))


def test_batch_box_list_count_checked():
    with pytest.raises(DimensionError):
        roi_pool_batch(Tensor(np.zeros((2, 1, 4, 4))), [[Box(0, 0, 1, 1)]], 1, 1, 1.0)


def test_all_rects_count():
    assert len(all_rects(3, 2)) == 6 * 3


def test_backward_gradient_mass_is_conserved():
    rng = np.random.default_rng(4)
    feats = Tensor(rng.standard_normal((1, 3, 8, 8)), requires_grad=True)
    with Tape() as tape:
        loss = tsum(roi_pool_batch(feats, [[Box(0, 0, 8, 8), Box(2, 1, 5, 7)]], 2, 3, 1.0))
    tape.backward(loss)
    assert feats.grad.sum() == 2 * 3 * 2 * 3
    assert np.all(feats.grad >= 0)
