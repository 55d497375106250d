import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skelcast import core
from skelcast.core import build_windows, from_egocentric, subsample, to_egocentric

from conftest import make_track_scene

finite = st.floats(-50, 50, allow_nan=False)
angle = st.floats(-10, 10, allow_nan=False)


def test_to_egocentric_identity_pose():
    np.testing.assert_array_equal(to_egocentric([3, 4], [0, 0, 0]), [3, 4])


def test_to_egocentric_own_location_is_origin():
    np.testing.assert_array_equal(to_egocentric([1, 0], [1, 0, math.pi / 2]), [0, 0])


def test_to_egocentric_quarter_turn():
    # world offset (1, 0) seen by a robot facing +y lies on its right
    np.testing.assert_allclose(to_egocentric([2, 1], [1, 1, math.pi / 2]), [0, -1], atol=1e-15)


@pytest.mark.parametrize("bad", [[np.nan, 0], [0, np.inf]])
def test_to_egocentric_rejects_non_finite(bad):
    with pytest.raises(ValueError):
        to_egocentric(bad, [0, 0, 0])
    with pytest.raises(ValueError):
        to_egocentric([0, 0], [0, 0, np.nan])


@given(x=finite, y=finite, yaw=angle)
def test_robot_position_maps_to_exact_zero(x, y, yaw):
    out = to_egocentric([x, y], [x, y, yaw])
    assert out[0] == 0.0 and out[1] == 0.0


@settings(max_examples=200)
@given(pts=st.lists(st.tuples(finite, finite), min_size=2, max_size=6), x=finite, y=finite, yaw=angle)
def test_to_egocentric_is_isometry(pts, x, y, yaw):
    p = np.array(pts)
    q = to_egocentric(p, [x, y, yaw])
    d0 = np.linalg.norm(p[:, None] - p[None], axis=-1)
    d1 = np.linalg.norm(q[:, None] - q[None], axis=-1)
    np.testing.assert_allclose(d1, d0, rtol=1e-12, atol=1e-12 * max(1.0, d0.max()))


@given(x=finite, y=finite, yaw=angle, px=finite, py=finite)
def test_from_egocentric_inverts(x, y, yaw, px, py):
    back = from_egocentric(to_egocentric([px, py], [x, y, yaw]), [x, y, yaw])
    np.testing.assert_allclose(back, [px, py], atol=1e-9)


def _linear_scene(T, A=2):
    t = np.arange(T)
    pos = np.stack([np.stack([t * 0.4 + i, np.full(T, float(i))], -1) for i in range(A)])
    return make_track_scene(pos)


@pytest.mark.parametrize("T,stride,expected", [(18, 18, 1), (30, 3, 5), (17, 1, 0), (24, None, 2)])
def test_window_counts(T, stride, expected):
    ws = build_windows(_linear_scene(T), 6, 12, stride)
    assert len(ws) == expected
    if stride == 3:
        assert [w.start for w in ws] == [0, 3, 6, 9, 12]
    for w in ws:
        assert w.future_pos.shape[1] == 12 and w.past_pos.shape[1] == 6


def test_agent_visible_only_in_future_is_excluded():
    pos = np.zeros((2, 18, 2))
    pos[1] += 5.0
    valid = np.ones((2, 18), bool)
    valid[1, :6] = False
    (w,) = build_windows(make_track_scene(pos, valid), 6, 12, 18)
    assert w.agent_ids == ("a0",)


def test_missing_frames_masked_not_interpolated():
    pos = np.stack([np.stack([np.arange(18.0), np.zeros(18)], -1)])
    valid = np.ones((1, 18), bool)
    valid[0, 3] = False
    valid[0, 10] = False
    (w,) = build_windows(make_track_scene(pos, valid), 6, 12, 18)
    assert not w.pos_valid[0, 3] and not w.pos_valid[0, 10]
    assert np.isnan(w.pos[0, 3]).all() and np.isnan(w.pos[0, 10]).all()


def test_windows_anchor_on_first_past_frame():
    T = 24
    poses = np.column_stack([np.arange(T) * 0.1, np.zeros(T), np.linspace(0, 1, T)])
    pos = np.random.default_rng(0).normal(size=(3, T, 2))
    scene = make_track_scene(pos, robot_poses=poses)
    for w in build_windows(scene, 6, 12, 3):
        np.testing.assert_array_equal(w.robot_pose_t0, poses[w.start])
        np.testing.assert_allclose(w.pos, to_egocentric(pos[:, w.start : w.start + 18], poses[w.start]))


def test_windows_rotate_3d_keypoints_but_keep_height():
    T = 18
    scene = make_track_scene(np.zeros((1, T, 2)), robot_poses=np.tile([1.0, 2.0, 0.5], (T, 1)))
    sk = scene.agents[0].skeleton
    sk.kp3d[:, 0] = [3.0, 4.0, 1.7]
    sk.kp3d_valid[:, 0] = True
    (w,) = build_windows(scene, 6, 12, 18)
    np.testing.assert_allclose(w.kp3d[0, 0, 0, :2], to_egocentric([3.0, 4.0], [1.0, 2.0, 0.5]))
    assert w.kp3d[0, 0, 0, 2] == 1.7
    assert np.isnan(w.kp3d[0, 0, 1]).all()


def test_build_windows_order_independent(rng):
    pos = rng.normal(size=(4, 30, 2))
    valid = rng.random((4, 30)) > 0.2
    a = build_windows(make_track_scene(pos, valid), 6, 12, 3)
    perm = [2, 0, 3, 1]
    b = build_windows(make_track_scene(pos[perm], valid[perm]), 6, 12, 3)
    for wa, wb in zip(a, b):
        # make_track_scene names agents by position in the input list
        order = sorted(range(wb.n_agents), key=lambda i: perm[int(wb.agent_ids[i][1:])])
        np.testing.assert_array_equal(wa.pos, wb.pos[order])
        np.testing.assert_array_equal(wa.pos_valid, wb.pos_valid[order])


def test_no_window_agent_without_past(rng):
    valid = rng.random((6, 40)) > 0.6
    for w in build_windows(make_track_scene(rng.normal(size=(6, 40, 2)), valid), 6, 12, 1):
        assert w.past_valid.any(axis=1).all()


def test_build_windows_rejects_bad_lengths():
    with pytest.raises(ValueError):
        build_windows(_linear_scene(20), 0, 12)


def test_subsample_keeps_every_kth():
    scene = _linear_scene(30)
    out = subsample(scene, 15, 3)
    assert out.n_frames == 6
    np.testing.assert_array_equal(out.agents[0].track.pos, scene.agents[0].track.pos[::5])
    assert out.dt == pytest.approx(scene.dt * 5)


def test_subsample_same_rate_is_identity():
    scene = _linear_scene(10)
    assert subsample(scene, 3, 3) is scene


def test_subsample_rejects_non_integer_ratio():
    with pytest.raises(ValueError, match=r"7.*3"):
        subsample(_linear_scene(10), 7, 3)


def test_subsample_tolerates_one_percent():
    assert subsample(_linear_scene(30), 29.9, 3).n_frames == 3


def test_track_rejects_nonfinite_valid_position():
    with pytest.raises(ValueError):
        core.AgentTrack("x", [[np.nan, 0.0]], [True])
