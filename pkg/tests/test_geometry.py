import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from c3dm.geometry import (DESK_LAYOUT, ActionVec, CameraTransform, Window, constrain_window, fixation_point,
                           img_to_real, mask_context, real_to_img, renormalize_action, unnormalize_action,
                           wrap_angle, zoom_context)
from c3dm.scene import TaskConfig, render, sample_scene
from c3dm.schedules import ScheduleSpec

CAM = CameraTransform.for_table((-0.5, -0.5, 0.5, 0.5), 64, 64)
SPEC = ScheduleSpec()


def test_table_corners_map_to_image_corners():
    np.testing.assert_allclose(real_to_img(CAM, [-0.5, -0.5]), [0, 0])
    np.testing.assert_allclose(real_to_img(CAM, [0.5, 0.5]), [64, 64])
    np.testing.assert_allclose(real_to_img(CAM, [0.0, 0.0]), [32, 32])


def test_camera_validation():
    with pytest.raises(ValueError):
        CameraTransform((0.0, 1.0), (0, 0), 8, 8)
    with pytest.raises(ValueError):
        CameraTransform((1.0, 1.0), (0, 0), 0, 8)


def test_full_window_normalises_table_to_unit_square():
    full = Window.full(CAM)
    a = ActionVec(np.array([0.5, -0.5, 0.3, 0.0, 0.25, 0.0]), DESK_LAYOUT)
    n = renormalize_action(a, full)
    np.testing.assert_allclose(n.values, [1.0, -1.0, 0.3, 0.0, 0.5, 0.0])


def test_yaw_passes_through_renormalisation():
    w = Window(np.array([10.0, 20.0]), np.array([4.0, 4.0]), CAM)
    a = ActionVec(np.array([0.1, 0.1, 0.7, -0.2, 0.3, -0.4]))
    n = renormalize_action(a, w)
    assert n.values[2] == 0.7 and n.values[5] == -0.4


def test_window_to_window_renormalisation_goes_through_metres():
    w1 = Window(np.array([16.0, 16.0]), np.array([8.0, 8.0]), CAM)
    w2 = Window(np.array([40.0, 30.0]), np.array([5.0, 3.0]), CAM)
    a = ActionVec(np.array([0.1, -0.3, 0.0, 0.2, 0.05, 0.0]))
    direct = renormalize_action(a, w2)
    via = renormalize_action(renormalize_action(a, w1), w2)
    np.testing.assert_allclose(direct.values, via.values, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(xy=st.lists(st.floats(-0.5, 0.5), min_size=2, max_size=2),
       c=st.lists(st.floats(2, 62), min_size=2, max_size=2), h=st.floats(0.5, 32))
def test_round_trips(xy, c, h):
    np.testing.assert_allclose(img_to_real(CAM, real_to_img(CAM, xy)), xy, atol=1e-12)
    w = Window(np.array(c), np.array([h, h]), CAM)
    a = ActionVec(np.array([xy[0], xy[1], 0.1]), DESK_LAYOUT[:1])
    back = unnormalize_action(renormalize_action(a, w), w)
    np.testing.assert_allclose(back.values, a.values, atol=1e-12)


@settings(max_examples=300, deadline=None)
@given(p=st.lists(st.floats(0, 64), min_size=2, max_size=2), t=st.floats(0, 1), jitter=st.booleans(),
       seed=st.integers(0, 2**16))
def test_constrained_window_contains_fixation_and_stays_in_image(p, t, jitter, seed):
    rng = np.random.default_rng(seed) if jitter else None
    w = constrain_window(np.array(p), t, SPEC, 0.2, CAM, rng)
    assert w.contains(p)
    assert w.inside_image()
    side = max(t, 0.2) * 64
    np.testing.assert_allclose(2 * w.half_extent, [max(side, 2.0)] * 2)


def test_window_is_full_image_at_t_equals_T():
    w = constrain_window(np.array([5.0, 60.0]), 1.0, SPEC, 0.2, CAM)
    assert w.same_as(Window.full(CAM))


@pytest.mark.parametrize("p", [[-1.0, 3.0], [3.0, 65.0], [np.nan, 1.0]])
def test_fixation_outside_image_is_rejected(p):
    with pytest.raises(ValueError):
        constrain_window(np.array(p), 0.5, SPEC, 0.2, CAM)


def test_fixation_point_in_pixels():
    a = ActionVec(np.array([0.0, 0.0, 0.0, 0.25, -0.25, 0.0]))
    np.testing.assert_allclose(fixation_point(a, 1, CAM), [48.0, 16.0])
    with pytest.raises(IndexError):
        fixation_point(a, 2, CAM)


def test_action_shape_is_checked():
    with pytest.raises(ValueError):
        ActionVec(np.zeros(5))


def test_mask_context_keeps_only_window_pixels():
    img = np.ones((64, 64, 3))
    w = Window(np.array([16.0, 16.0]), np.array([8.0, 8.0]), CAM)
    out = mask_context(img, w, (0.0, 0.0, 0.0))
    assert out[:, :, 0].sum() == 16 * 16
    assert out[8:24, 8:24].min() == 1.0


def test_zoom_of_full_window_equals_render():
    scene = sample_scene(TaskConfig(), 3)
    np.testing.assert_array_equal(zoom_context(scene, Window.full(CAM), 64, 64), render(scene))


def test_wrap_angle():
    np.testing.assert_allclose(wrap_angle(np.array([3 * np.pi, -3 * np.pi, 0.5])), [np.pi, np.pi, 0.5], atol=1e-12)


def test_spec_camera_examples():
    cam = CameraTransform((64.0, 64.0), (32.0, 32.0), 64, 64)
    np.testing.assert_allclose(real_to_img(cam, [0.0, 0.0]), [32, 32])
    np.testing.assert_allclose(real_to_img(cam, [0.5, -0.5]), [64, 0])
    a = ActionVec(np.array([0.0, 0.0, 0.0, 0.25, 0.25, 0.0]))
    np.testing.assert_allclose(fixation_point(a, 1, cam), [48, 48])


def test_window_centre_and_corner_map_to_origin_and_bounds():
    w = Window(np.array([20.0, 40.0]), np.array([8.0, 4.0]), CAM)
    c = img_to_real(CAM, w.center)
    corner = img_to_real(CAM, w.hi)
    a = ActionVec(np.array([c[0], c[1], 0.0, corner[0], corner[1], 0.0]))
    np.testing.assert_allclose(renormalize_action(a, w).values, [0, 0, 0, 1, 1, 0], atol=1e-12)


def test_spec_half_window_example():
    w = constrain_window(np.array([32.0, 32.0]), 0.5, SPEC, 0.2, CAM)
    np.testing.assert_allclose(w.center, [32, 32])
    np.testing.assert_allclose(2 * w.half_extent, [32, 32])


def test_window_area_is_monotone_in_t():
    p = np.array([10.0, 50.0])
    areas = [constrain_window(p, t, SPEC, 0.2, CAM).area for t in np.linspace(0, 1, 21)]
    assert all(a <= b for a, b in zip(areas, areas[1:]))


def test_frame_consistency_of_fixation_points():
    w = Window(np.array([20.0, 44.0]), np.array([6.0, 10.0]), CAM)
    a = ActionVec(np.array([-0.1, 0.2, 0.0, 0.3, -0.4, 0.0]))
    local = fixation_point(renormalize_action(a, w), 0, w.normalized_transform(64, 64))
    parent = fixation_point(a, 0, CAM)
    expected = (parent - w.lo) * np.array([64, 64]) / (2 * w.half_extent)
    np.testing.assert_allclose(local, expected, atol=1e-9)


def test_mask_full_and_tiny_windows():
    img = np.random.default_rng(0).uniform(size=(64, 64, 3))
    np.testing.assert_array_equal(mask_context(img, Window.full(CAM), (0, 0, 0)), img)
    tiny = mask_context(img, Window(np.array([10.5, 20.5]), np.array([1.0, 1.0]), CAM), (0, 0, 0))
    # closed bounds: centres 9.5, 10.5 and 11.5 on each axis
    assert np.count_nonzero(tiny.any(axis=2)) == 9


def test_zoom_quadruples_object_area():
    task = TaskConfig(n_distractors=0)
    scene = sample_scene(task, 0)
    p = (np.asarray(scene.target.position) + 0.5) * 64
    wide = constrain_window(p, 0.5, SPEC, 0.2, CAM)
    narrow = Window(wide.center, wide.half_extent / 2, CAM)
    red = lambda img: np.count_nonzero(np.all(np.isclose(img, (0.8, 0.2, 0.2)), axis=2))  # noqa: E731
    assert red(zoom_context(scene, narrow, 64, 64)) == pytest.approx(4 * red(zoom_context(scene, wide, 64, 64)),
                                                                      rel=0.1)


def test_zoomed_centroid_matches_renormalised_position():
    scene = sample_scene(TaskConfig(), 4)
    p = (np.asarray(scene.goal.position) + 0.5) * 64
    w = Window(np.clip(p + 3.0, 8, 56), np.array([8.0, 8.0]), CAM)
    img = zoom_context(scene, w, 64, 64)
    rows, cols = np.nonzero(np.all(np.isclose(img, (0.2, 0.75, 0.25)), axis=2))
    centroid = np.array([cols.mean() + 0.5, rows.mean() + 0.5])
    a = ActionVec(np.array([*scene.goal.position, 0.0]), DESK_LAYOUT[:1])
    expected = fixation_point(renormalize_action(a, w), 0, w.normalized_transform(64, 64))
    np.testing.assert_allclose(centroid, expected, atol=0.5)
