import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skelcast import skelfeat as sf
from skelcast.core import build_windows
from skelcast.skelfeat import (
    K2D, K3D, KL2D, KL3D, KU3D, LOWER_CUES, MIRROR_3D, UPPER_CUES, FeatureConfig,
    assemble_features, derive_cues_lower, derive_cues_upper, feature_manifest, head_yaw,
    interior_angle, select_keypoints,
)

from conftest import make_track_scene


def random_skeleton(rng, center=(0.0, 0.0)):
    """Loose standing pose with jitter; every joint valid."""
    kp = np.zeros((33, 3))
    kp[:, :2] = center
    kp[:, 2] = 1.0
    base = {
        0: (0.08, 0, 1.65), 2: (0.07, 0.03, 1.68), 5: (0.07, -0.03, 1.68),
        7: (0.0, 0.08, 1.65), 8: (0.0, -0.08, 1.65),
        11: (0, 0.2, 1.45), 12: (0, -0.2, 1.45), 13: (0, 0.25, 1.15), 14: (0, -0.25, 1.15),
        15: (0.05, 0.25, 0.9), 16: (0.05, -0.25, 0.9), 23: (0, 0.1, 0.95), 24: (0, -0.1, 0.95),
        25: (0.05, 0.1, 0.5), 26: (0.05, -0.1, 0.5), 27: (0, 0.1, 0.08), 28: (0, -0.1, 0.08),
        29: (-0.05, 0.1, 0.03), 30: (-0.05, -0.1, 0.03), 31: (0.15, 0.1, 0.02), 32: (0.15, -0.1, 0.02),
    }
    for j, p in base.items():
        kp[j] = np.array(p) + [center[0], center[1], 0.0]
    kp += rng.normal(scale=0.04, size=kp.shape)
    return kp, np.ones(33, bool)


# ---------------------------------------------------------------- subsets


def test_subset_sizes():
    assert KL3D.indices == tuple(range(23, 33))
    assert KU3D.indices == (2, 5, 7, 8, 11, 12, 13, 14, 15, 16)
    assert KL2D.indices == (11, 12, 13, 14, 15, 16)
    assert K2D.size == 17 and K3D.size == 33


def test_select_all_invalid_is_zero():
    v, m = select_keypoints(np.ones((33, 3)), np.zeros(33, bool), KL3D, (0.0, 0.0))
    assert v.shape == (30,) and not v.any() and not m.any()


def test_select_centers_on_agent():
    kp = np.zeros((33, 3))
    kp[23] = (2.1, 3.0, 0.9)
    valid = np.zeros(33, bool)
    valid[23] = True
    v, m = select_keypoints(kp, valid, KL3D, (2.0, 3.0))
    np.testing.assert_allclose(v[:3], [0.1, 0.0, 0.9], atol=1e-15)
    assert m[0] and not m[1:].any()


def test_select_kl2d_layout(rng):
    kp = np.column_stack([rng.uniform(0, 400, 17), rng.uniform(0, 200, 17), np.ones(17)])
    v, m = select_keypoints(kp, np.ones(17, bool), KL2D, image_width=400)
    assert v.shape == (12,) and m.shape == (6,)
    assert np.abs(v).max() == pytest.approx(1.0)
    np.testing.assert_allclose(v.reshape(6, 2).mean(0), 0, atol=1e-12)


def test_select_2d_unwraps_seam():
    kp = np.zeros((17, 3))
    valid = np.zeros(17, bool)
    kp[11, :2] = (398, 100)
    kp[12, :2] = (2, 100)
    valid[11:13] = True
    v, _ = select_keypoints(kp, valid, KL2D, image_width=400)
    np.testing.assert_allclose(v[:4], [-1, 0, 1, 0], atol=1e-12)


def test_select_rejects_skeleton_type_mismatch():
    with pytest.raises(ValueError):
        select_keypoints(np.zeros((17, 3)), np.ones(17, bool), KL3D, (0, 0))
    with pytest.raises(ValueError):
        select_keypoints(np.zeros((33, 3)), np.ones(33, bool), KL2D)


@settings(max_examples=100)
@given(dx=st.floats(-30, 30), dy=st.floats(-30, 30), seed=st.integers(0, 2**31))
def test_translation_invariance(dx, dy, seed):
    rng = np.random.default_rng(seed)
    kp, valid = random_skeleton(rng, (1.0, -2.0))
    shifted = kp + [dx, dy, 0.0]
    for spec in (KL3D, KU3D, K3D):
        a, _ = select_keypoints(kp, valid, spec, (1.0, -2.0))
        b, _ = select_keypoints(shifted, valid, spec, (1.0 + dx, -2.0 + dy))
        np.testing.assert_allclose(a, b, atol=1e-12)
    np.testing.assert_allclose(derive_cues_lower(kp, valid)[0], derive_cues_lower(shifted, valid)[0], atol=1e-9)


# ---------------------------------------------------------------- angles


@pytest.mark.parametrize("a,b,c,expected", [
    ((0, 0, 1), (0, 0, 0.5), (0, 0, 0), math.pi),
    ((1, 0, 0), (0, 0, 0), (0, 1, 0), math.pi / 2),
    ((1, 0, 0), (0, 0, 0), (1, 1, 0), math.pi / 4),
])
def test_interior_angle_examples(a, b, c, expected):
    ang, ok = interior_angle(a, b, c)
    assert ok and ang == pytest.approx(expected, abs=1e-12)


def test_interior_angle_degenerate_flagged():
    ang, ok = interior_angle((0, 0, 0), (0, 0, 0), (1, 0, 0))
    assert not ok and math.isnan(ang)


def test_interior_angle_collinear_clamped():
    # nearly collinear inputs whose cosine rounds past 1 must not produce NaN
    ang, ok = interior_angle((1e8, 1, 0), (0, 0, 0), (1e8 + 1, 1, 0))
    assert ok and 0.0 <= ang < 1e-7


@settings(max_examples=300)
@given(pts=st.lists(st.floats(-5, 5), min_size=9, max_size=9))
def test_interior_angle_symmetric(pts):
    a, b, c = np.reshape(pts, (3, 3))
    x, ok1 = interior_angle(a, b, c)
    y, ok2 = interior_angle(c, b, a)
    assert ok1 == ok2
    if ok1:
        assert abs(x - y) <= 1e-12
        assert 0.0 <= x <= math.pi


# ---------------------------------------------------------------- cues


def test_step_length_example():
    kp = np.zeros((33, 3))
    valid = np.zeros(33, bool)
    kp[27] = (0, 0, 0.1)
    kp[28] = (0.4, 0, 0.1)
    valid[[27, 28]] = True
    v, ok = derive_cues_lower(kp, valid)
    assert ok[4] and v[4] == pytest.approx(0.4, abs=1e-15)
    assert not ok[:4].any()


def test_vertical_leg():
    kp = np.zeros((33, 3))
    valid = np.zeros(33, bool)
    for hip, knee, ank in ((23, 25, 27), (24, 26, 28)):
        kp[hip] = (0, 0, 0.9)
        kp[knee] = (0, 0, 0.5)
        kp[ank] = (0, 0, 0.1)
        valid[[hip, knee, ank]] = True
    v, ok = derive_cues_lower(kp, valid)
    assert ok.all()
    assert v[0] == pytest.approx(math.pi) and v[1] == pytest.approx(math.pi)
    assert v[2] == pytest.approx(0, abs=1e-7) and v[3] == pytest.approx(0, abs=1e-7)


def test_missing_left_ankle_propagates(rng):
    kp, valid = random_skeleton(rng)
    valid[27] = False
    _, ok = derive_cues_lower(kp, valid)
    assert list(ok) == [False, True, True, True, False]


def test_head_yaw_example():
    kp = np.zeros((33, 3))
    valid = np.zeros(33, bool)
    kp[7] = (0, 0.1, 1.6)
    kp[8] = (0, -0.1, 1.6)
    kp[2] = kp[5] = (0.08, 0, 1.62)
    valid[[2, 5, 7, 8]] = True
    yaw, ok = head_yaw(kp, valid)
    assert ok and yaw == pytest.approx(0.0, abs=1e-15)
    valid[[7, 8]] = False
    assert not head_yaw(kp, valid)[1]


def test_hanging_arm():
    kp = np.zeros((33, 3))
    valid = np.zeros(33, bool)
    kp[11], kp[13], kp[15] = (0, 0.2, 1.45), (0, 0.2, 1.15), (0, 0.2, 0.9)
    valid[[11, 13, 15]] = True
    v, ok = derive_cues_upper(kp, valid)
    assert ok[0] and v[0] == pytest.approx(math.pi)
    assert ok[2] and v[2] == pytest.approx(0.0, abs=1e-7)
    assert not ok[1] and not ok[4]


@settings(max_examples=100)
@given(seed=st.integers(0, 2**31))
def test_cue_ranges(seed):
    rng = np.random.default_rng(seed)
    kp, valid = random_skeleton(rng)
    kp += rng.normal(scale=0.3, size=kp.shape)
    lv, lok = derive_cues_lower(kp, valid)
    uv, uok = derive_cues_upper(kp, valid)
    ang = np.concatenate([lv[:4], uv[:4]])[np.concatenate([lok[:4], uok[:4]])]
    assert np.all((ang >= 0) & (ang <= math.pi))
    assert not lok[4] or lv[4] >= 0


@settings(max_examples=100)
@given(seed=st.integers(0, 2**31))
def test_mirror_symmetry(seed):
    rng = np.random.default_rng(seed)
    kp, valid = random_skeleton(rng)
    mirrored = kp[MIRROR_3D] * [1.0, -1.0, 1.0]
    lv, _ = derive_cues_lower(kp, valid)
    lm, _ = derive_cues_lower(mirrored, valid)
    uv, _ = derive_cues_upper(kp, valid)
    um, _ = derive_cues_upper(mirrored, valid)
    assert np.array_equal(lm[[1, 0, 3, 2]], lv[:4])
    assert lm[4] == lv[4]
    assert np.array_equal(um[[1, 0, 3, 2]], uv[:4])
    assert um[4] == pytest.approx(-uv[4], abs=1e-15) or abs(abs(uv[4]) - math.pi) < 1e-12


# ---------------------------------------------------------------- assembly


@pytest.mark.parametrize("cfg,values,masks", [
    ("NONE", 0, 0), ("KL3D", 30, 10), ("KL3D_CL3D", 35, 15), ("KU3D", 30, 10),
    ("KU3D_CU3D", 35, 15), ("K3D", 99, 33), ("K3D_C3D", 109, 43), ("K2D", 34, 17), ("KL2D", 12, 6),
])
def test_manifest_dims(cfg, values, masks):
    man = feature_manifest(cfg)
    assert (man.value_dim, man.mask_dim) == (values, masks)
    assert sf.FeatureManifest.from_dict(man.to_dict()) == man


def test_parse_rejects_unknown():
    with pytest.raises(ValueError, match="unknown feature config"):
        FeatureConfig.parse("KX9")


def _skeleton_window(rng, with3d=True, with2d=True, n=3):
    T = 18
    pos = rng.normal(scale=3, size=(n, T, 2))
    valid = rng.random((n, T)) > 0.1
    valid[:, 0] = True
    scene = make_track_scene(pos, valid)
    for i, a in enumerate(scene.agents):
        for t in range(T):
            if not valid[i, t]:
                continue
            if with3d:
                a.skeleton.kp3d[t], a.skeleton.kp3d_valid[t] = random_skeleton(rng, pos[i, t])
            if with2d:
                a.skeleton.kp2d[t] = np.column_stack([rng.uniform(0, 400, 17), rng.uniform(0, 200, 17), np.ones(17)])
                a.skeleton.kp2d_valid[t] = rng.random(17) > 0.2
    return build_windows(scene, 6, 12, 18)[0]


@pytest.mark.parametrize("cfg", [c.value for c in FeatureConfig])
def test_assemble_dims_data_independent(cfg, rng):
    man = feature_manifest(cfg)
    for w in (_skeleton_window(rng), _skeleton_window(rng, n=5)):
        block = assemble_features(w, cfg)
        assert block.values.shape == (w.n_agents, 6, man.value_dim)
        assert block.stacked().shape == (w.n_agents, 6, man.dim)
        assert np.isfinite(block.values).all()


def test_assemble_requires_3d(rng):
    w = _skeleton_window(rng, with3d=False)
    with pytest.raises(ValueError, match="a0"):
        assemble_features(w, "KL3D")
    assemble_features(w, "K2D")


def test_assemble_requires_2d(rng):
    w = _skeleton_window(rng, with2d=False)
    with pytest.raises(ValueError, match="3D"):
        assemble_features(w, "KL2D")


def test_assemble_matches_per_frame_selection(rng):
    w = _skeleton_window(rng)
    block = assemble_features(w, "KL3D_CL3D")
    i, t = 1, 2
    if w.pos_valid[i, t]:
        v, _ = select_keypoints(w.kp3d[i, t], w.kp3d_valid[i, t], KL3D, w.pos[i, t])
        c, _ = derive_cues_lower(w.kp3d[i, t], w.kp3d_valid[i, t])
        np.testing.assert_array_equal(block.values[i, t], np.concatenate([v, c]))


def test_cue_name_tables():
    assert len(LOWER_CUES) == 5 and len(UPPER_CUES) == 5
