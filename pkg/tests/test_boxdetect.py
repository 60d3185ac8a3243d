import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mofo.boxdetect import (BitMask, Contour, MotionBox, binarize, border_margin, clip_motion_box, detect_clip,
                            find_contours, iou, otsu_threshold, select_motion_box, suppress_border)
from mofo.config import DetectConfig, SmoothConfig
from mofo.errors import RejectedInputError
from mofo.evalsynth import SceneSpec, gen_clip
from mofo.flow import FlowField
from mofo.motionmap import MotionMap

from .conftest import textured


def square_contour(x0, y0, size):
    points = [(x0, y0), (x0 + size - 1, y0), (x0 + size - 1, y0 + size - 1), (x0, y0 + size - 1)]
    return Contour(points, size * size)


def test_binarize_two_halves():
    m = np.zeros((6, 8))
    m[:, 4:] = 10.0
    bits = binarize(MotionMap(m)).bits
    assert bits[:, 4:].all() and not bits[:, :4].any()


def test_binarize_constant_map_is_empty():
    assert not binarize(MotionMap(np.full((5, 5), 3.0))).bits.any()
    assert otsu_threshold(np.full(10, 3.0)) is None


def test_binarize_single_bright_pixel():
    m = np.zeros((7, 7))
    m[2, 5] = 255.0
    bits = binarize(MotionMap(m)).bits
    assert bits.sum() == 1 and bits[2, 5]


def test_otsu_matches_brute_force():
    values = np.concatenate([np.random.default_rng(0).normal(2.0, 0.3, 200),
                             np.random.default_rng(1).normal(6.0, 0.5, 100)])
    lo, hi = values.min(), values.max()
    best, best_t = -1.0, None
    for t in np.unique(values)[:-1]:
        below, above = values[values <= t], values[values > t]
        score = below.size * above.size * (below.mean() - above.mean()) ** 2
        if score > best:
            best, best_t = score, t
    t = otsu_threshold(values)
    assert lo <= t < hi
    assert abs(t - best_t) <= (hi - lo) / 256 * 2


def test_contours_of_empty_mask():
    assert find_contours(BitMask(np.zeros((5, 5)))) == []


def test_filled_square_contour():
    mask = np.zeros((7, 7), dtype=bool)
    mask[2:5, 2:5] = True
    contours = find_contours(BitMask(mask))
    assert len(contours) == 1
    assert contours[0].area == 9
    assert len(contours[0].points) == 8
    assert contours[0].bbox == MotionBox(2, 2, 5, 5)


def test_two_disjoint_squares():
    mask = np.zeros((8, 8), dtype=bool)
    mask[1:3, 1:3] = True
    mask[5:7, 4:6] = True
    contours = find_contours(BitMask(mask))
    assert [c.area for c in contours] == [4, 4]


def test_hole_borders_are_not_contours():
    mask = np.zeros((9, 9), dtype=bool)
    mask[1:8, 1:8] = True
    mask[3:6, 3:6] = False
    contours = find_contours(BitMask(mask))
    assert len(contours) == 1
    assert contours[0].area == 49 - 9


def test_diagonal_pixels_are_one_component():
    mask = np.eye(6, dtype=bool)
    contours = find_contours(BitMask(mask))
    assert len(contours) == 1 and contours[0].area == 6


def test_select_single_and_pair():
    frame = (10, 10)
    assert select_motion_box([square_contour(1, 1, 3)], frame) == MotionBox(1, 1, 4, 4)
    pair = [square_contour(1, 1, 2), square_contour(5, 5, 2)]
    assert select_motion_box(pair, frame) == MotionBox(1, 1, 7, 7)


def test_select_top_two_by_area():
    contours = [square_contour(0, 0, 1), square_contour(2, 2, 3), square_contour(7, 7, 2)]
    assert select_motion_box(contours, (10, 10)) == MotionBox(2, 2, 9, 9)


def test_select_falls_back_to_full_frame():
    assert select_motion_box([], (12, 8)) == MotionBox(0, 0, 12, 8)
    tiny = [square_contour(0, 0, 1)]
    assert select_motion_box(tiny, (100, 100), DetectConfig(min_area_fraction=0.01)) == MotionBox(0, 0, 100, 100)


def test_suppress_border_zeroes_the_band():
    motion = suppress_border(MotionMap(np.ones((20, 24))), 3)
    assert motion.m[3:-3, 3:-3].min() == 1.0
    assert motion.m.sum() == 14 * 18
    assert suppress_border(MotionMap(np.ones((20, 24))), 0).m.min() == 1.0


def test_suppress_border_is_capped():
    motion = suppress_border(MotionMap(np.ones((16, 16))), 50)
    assert motion.m[4:12, 4:12].min() == 1.0
    assert motion.m.sum() == 64


def test_border_margin_from_flow():
    field = FlowField.uniform(32, 32, 2.5, -1.0)
    assert border_margin(field, SmoothConfig(kernel_radius=5)) == 9
    assert border_margin(FlowField.uniform(32, 32, 0.0, 0.0), SmoothConfig(sigma=1.0, kernel_radius=2)) == 3


def test_edge_strip_does_not_win_selection():
    m = np.zeros((64, 64))
    m[:, 58:] = 1.0
    m[20:36, 20:36] = 1.0
    unsuppressed = select_motion_box(find_contours(binarize(MotionMap(m))), (64, 64))
    assert unsuppressed == MotionBox(20, 0, 64, 64)
    suppressed = select_motion_box(find_contours(binarize(suppress_border(MotionMap(m), 8))), (64, 64))
    assert suppressed == MotionBox(20, 20, 36, 36)


def test_iou_hand_values():
    a = MotionBox(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, MotionBox(5, 5, 6, 6)) == 0.0
    assert iou(a, MotionBox(1, 0, 3, 2)) == 1 / 3


boxes = st.tuples(st.integers(0, 20), st.integers(0, 20), st.integers(1, 20), st.integers(1, 20)).map(
    lambda t: MotionBox(t[0], t[1], t[0] + t[2], t[1] + t[3]))


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0
    assert iou(a, a) == 1.0


def test_invalid_boxes_rejected():
    with pytest.raises(RejectedInputError):
        MotionBox(3, 0, 3, 4)
    with pytest.raises(RejectedInputError):
        MotionBox(-1, 0, 3, 4)


def test_static_clip_falls_back():
    image = textured(32, seed=9)
    detection = detect_clip([image, image, image])
    assert detection.box == MotionBox(0, 0, 32, 32)
    assert detection.fallback == [True, True]
    assert clip_motion_box([image, image]) == MotionBox(0, 0, 32, 32)


@pytest.mark.slow
def test_moving_sprite_is_found():
    spec = SceneSpec(width=96, height=96, sprite_size=32, start=(20.0, 30.0), velocity=(2.0, 0.0))
    clip = gen_clip(spec, seed=1)
    detection = detect_clip(clip.frames)
    assert iou(detection.box, clip.union_box) >= 0.5
    assert not any(detection.fallback)
    assert len(detection.frame_boxes) == spec.frames - 1


@pytest.mark.slow
def test_camera_pan_is_ignored():
    spec = SceneSpec(width=96, height=96, sprite_size=32, start=(20.0, 30.0), velocity=(2.0, 0.0), pan=(2.0, 0.0))
    clip = gen_clip(spec, seed=1)
    assert iou(clip_motion_box(clip.frames), clip.union_box) >= 0.5
