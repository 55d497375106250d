"""Skeletal feature streams: keypoint subsets plus derived biomechanical cues.

3D keypoints follow the 33-landmark BlazePose/MediaPipe layout, 2D
keypoints the COCO-17 layout. Per timestep an agent contributes a flat
value vector and a parallel validity vector whose sizes depend only on the
feature configuration.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from .core import N_KP2D, N_KP3D, SceneWindow

# 33-point layout
NOSE = 0
L_EYE, R_EYE = 2, 5
L_EAR, R_EAR = 7, 8
L_SHOULDER, R_SHOULDER = 11, 12
L_ELBOW, R_ELBOW = 13, 14
L_WRIST, R_WRIST = 15, 16
L_HIP, R_HIP = 23, 24
L_KNEE, R_KNEE = 25, 26
L_ANKLE, R_ANKLE = 27, 28

# 33-point index permutation that swaps left and right labels
MIRROR_3D = np.array([0, 4, 5, 6, 1, 2, 3, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15, 18, 17,
                      20, 19, 22, 21, 24, 23, 26, 25, 28, 27, 30, 29, 32, 31])

DOWN = np.array([0.0, 0.0, -1.0])
_DEGENERATE = 1e-6


@dataclass(frozen=True)
class KeypointSubsetSpec:
    name: str
    dim: int  # 2 or 3 (skeleton type)
    indices: tuple

    @property
    def size(self) -> int:
        return len(self.indices)


K3D = KeypointSubsetSpec("K3D", 3, tuple(range(N_KP3D)))
KL3D = KeypointSubsetSpec("KL3D", 3, tuple(range(23, 33)))
KU3D = KeypointSubsetSpec("KU3D", 3, (L_EYE, R_EYE, L_EAR, R_EAR, L_SHOULDER, R_SHOULDER,
                                       L_ELBOW, R_ELBOW, L_WRIST, R_WRIST))
K2D = KeypointSubsetSpec("K2D", 2, tuple(range(N_KP2D)))
KL2D = KeypointSubsetSpec("KL2D", 2, (11, 12, 13, 14, 15, 16))

LOWER_CUES = ("knee_angle_L", "knee_angle_R", "thigh_elev_L", "thigh_elev_R", "step_length")
UPPER_CUES = ("elbow_angle_L", "elbow_angle_R", "upperarm_elev_L", "upperarm_elev_R", "head_yaw")


class FeatureConfig(enum.Enum):
    NONE = "NONE"
    K3D = "K3D"
    K3D_C3D = "K3D_C3D"
    KU3D = "KU3D"
    KU3D_CU3D = "KU3D_CU3D"
    KL3D = "KL3D"
    KL3D_CL3D = "KL3D_CL3D"
    K2D = "K2D"
    KL2D = "KL2D"

    @classmethod
    def parse(cls, name) -> "FeatureConfig":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).upper())
        except ValueError:
            raise ValueError(f"unknown feature config {name!r}; choose from {[c.value for c in cls]}") from None

    @property
    def subset(self):
        return _SUBSETS[self]

    @property
    def cues(self) -> tuple:
        return _CUES[self]

    @property
    def is_3d(self) -> bool:
        return self.subset is not None and self.subset.dim == 3

    @property
    def is_2d(self) -> bool:
        return self.subset is not None and self.subset.dim == 2


_SUBSETS = {
    FeatureConfig.NONE: None,
    FeatureConfig.K3D: K3D, FeatureConfig.K3D_C3D: K3D,
    FeatureConfig.KU3D: KU3D, FeatureConfig.KU3D_CU3D: KU3D,
    FeatureConfig.KL3D: KL3D, FeatureConfig.KL3D_CL3D: KL3D,
    FeatureConfig.K2D: K2D, FeatureConfig.KL2D: KL2D,
}
_CUES = {c: () for c in FeatureConfig}
_CUES[FeatureConfig.K3D_C3D] = LOWER_CUES + UPPER_CUES
_CUES[FeatureConfig.KU3D_CU3D] = UPPER_CUES
_CUES[FeatureConfig.KL3D_CL3D] = LOWER_CUES


# --------------------------------------------------------------------------
# keypoint selection


def select_keypoints(kp, valid, spec: KeypointSubsetSpec, agent_pos=None, image_width=None):
    """Flatten one frame's keypoint subset into (values, mask).

    3D: x, y are taken relative to ``agent_pos``, z is kept as height.
    2D: (u, v) are centered on the subset's valid centroid and divided by
    the largest absolute offset, so they land in [-1, 1]. Columns are
    unwrapped around the panorama seam when ``image_width`` is given.
    Invalid keypoints are zero with a cleared mask bit.
    """
    kp = np.asarray(kp, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    expected = N_KP3D if spec.dim == 3 else N_KP2D
    if kp.shape[0] != expected:
        raise ValueError(f"{spec.name} expects a {expected}-point skeleton, got {kp.shape[0]} points")
    idx = list(spec.indices)
    m = valid[idx]
    sel = kp[idx, : spec.dim].copy()
    out = np.zeros((len(idx), spec.dim))
    if not m.any():
        return out.reshape(-1), m
    if spec.dim == 3:
        if agent_pos is None or not np.all(np.isfinite(agent_pos)):
            raise ValueError("3D keypoint selection needs a finite agent position")
        out[m] = sel[m] - np.array([agent_pos[0], agent_pos[1], 0.0])
    else:
        pts = sel[m]
        if image_width:
            ref = pts[0, 0]
            pts[:, 0] = ref + (pts[:, 0] - ref + image_width / 2) % image_width - image_width / 2
        pts = pts - pts.mean(axis=0)
        scale = np.abs(pts).max()
        out[m] = pts / scale if scale > 0 else pts
    return out.reshape(-1), m


# --------------------------------------------------------------------------
# cues


def interior_angle(a, b, c):
    """Angle at vertex ``b`` between rays b->a and b->c.

    Returns ``(angle, ok)``; ``ok`` is False (angle NaN) when either
    segment is shorter than 1e-6.
    """
    ba = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    bc = np.asarray(c, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    na, nc = np.linalg.norm(ba), np.linalg.norm(bc)
    if na <= _DEGENERATE or nc <= _DEGENERATE:
        return math.nan, False
    cos = float(np.dot(ba, bc) / (na * nc))
    return math.acos(min(1.0, max(-1.0, cos))), True


def _elevation(top, bottom):
    """Angle between the segment top->bottom and straight down."""
    return interior_angle(np.asarray(top) + DOWN, top, bottom)


def _joint(kp, valid, a, b, c):
    if valid[a] and valid[b] and valid[c]:
        return interior_angle(kp[a], kp[b], kp[c])
    return math.nan, False


def _seg_elev(kp, valid, top, bottom):
    if valid[top] and valid[bottom]:
        return _elevation(kp[top], kp[bottom])
    return math.nan, False


def derive_cues_lower(kp3d, valid):
    """Leg cues for one frame: knee angles, thigh elevations, step length.

    Returns (values, flags) in the order of ``LOWER_CUES``.
    """
    kp3d = np.asarray(kp3d, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    cues = [
        _joint(kp3d, valid, L_HIP, L_KNEE, L_ANKLE),
        _joint(kp3d, valid, R_HIP, R_KNEE, R_ANKLE),
        _seg_elev(kp3d, valid, L_HIP, L_KNEE),
        _seg_elev(kp3d, valid, R_HIP, R_KNEE),
    ]
    if valid[L_ANKLE] and valid[R_ANKLE]:
        d = kp3d[L_ANKLE, :2] - kp3d[R_ANKLE, :2]
        cues.append((math.hypot(d[0], d[1]), True))
    else:
        cues.append((math.nan, False))
    vals, ok = zip(*cues)
    return np.array(vals), np.array(ok)


def head_yaw(kp3d, valid):
    """Facing azimuth from the ear-to-ear segment, pointed toward the eyes."""
    if not (valid[L_EAR] and valid[R_EAR]):
        return math.nan, False
    eyes = [j for j in (L_EYE, R_EYE) if valid[j]]
    if not eyes:
        return math.nan, False
    ear_mid = 0.5 * (kp3d[L_EAR, :2] + kp3d[R_EAR, :2])
    d = kp3d[L_EAR, :2] - kp3d[R_EAR, :2]
    n = np.array([d[1], -d[0]])
    if np.linalg.norm(n) <= _DEGENERATE:
        return math.nan, False
    to_eyes = kp3d[eyes, :2].mean(axis=0) - ear_mid
    side = float(np.dot(n, to_eyes))
    if side == 0.0:
        return math.nan, False
    if side < 0:
        n = -n
    return float(wrap(math.atan2(n[1], n[0]))), True


def wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def derive_cues_upper(kp3d, valid):
    """Arm and head cues for one frame, in the order of ``UPPER_CUES``."""
    kp3d = np.asarray(kp3d, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    cues = [
        _joint(kp3d, valid, L_SHOULDER, L_ELBOW, L_WRIST),
        _joint(kp3d, valid, R_SHOULDER, R_ELBOW, R_WRIST),
        _seg_elev(kp3d, valid, L_SHOULDER, L_ELBOW),
        _seg_elev(kp3d, valid, R_SHOULDER, R_ELBOW),
        head_yaw(kp3d, valid),
    ]
    vals, ok = zip(*cues)
    return np.array(vals), np.array(ok)


def derive_cues(kp3d, valid, names):
    """Cue values/flags for the requested cue names (a LOWER/UPPER combination)."""
    out_v, out_m = [], []
    if any(n in LOWER_CUES for n in names):
        v, m = derive_cues_lower(kp3d, valid)
        out_v.append(v)
        out_m.append(m)
    if any(n in UPPER_CUES for n in names):
        v, m = derive_cues_upper(kp3d, valid)
        out_v.append(v)
        out_m.append(m)
    if not out_v:
        return np.zeros(0), np.zeros(0, bool)
    return np.concatenate(out_v), np.concatenate(out_m)


# --------------------------------------------------------------------------
# assembly


@dataclass(frozen=True)
class FeatureManifest:
    config: str
    value_names: tuple
    mask_names: tuple

    @property
    def value_dim(self) -> int:
        return len(self.value_names)

    @property
    def mask_dim(self) -> int:
        return len(self.mask_names)

    @property
    def dim(self) -> int:
        return self.value_dim + self.mask_dim

    def to_dict(self) -> dict:
        return {"config": self.config, "value_dim": self.value_dim, "mask_dim": self.mask_dim,
                "values": list(self.value_names), "masks": list(self.mask_names)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureManifest":
        return cls(d["config"], tuple(d["values"]), tuple(d["masks"]))


def feature_manifest(config) -> FeatureManifest:
    config = FeatureConfig.parse(config)
    spec = config.subset
    if spec is None:
        return FeatureManifest(config.value, (), ())
    axes = "xyz" if spec.dim == 3 else "uv"
    kp_names = tuple(f"kp{j}.{ax}" for j in spec.indices for ax in axes)
    kp_masks = tuple(f"kp{j}.valid" for j in spec.indices)
    cue_masks = tuple(f"{c}.valid" for c in config.cues)
    return FeatureManifest(config.value, kp_names + config.cues, kp_masks + cue_masks)


@dataclass
class FeatureBlock:
    values: np.ndarray  # (N, H, value_dim)
    mask: np.ndarray  # (N, H, mask_dim) bool
    manifest: FeatureManifest

    def stacked(self) -> np.ndarray:
        """Values and mask bits side by side, as the model consumes them."""
        return np.concatenate([self.values, self.mask.astype(np.float64)], axis=-1)


def assemble_features(window: SceneWindow, config) -> FeatureBlock:
    """Per-agent, per-past-timestep features for ``config``."""
    config = FeatureConfig.parse(config)
    man = feature_manifest(config)
    N, H = window.n_agents, window.H
    values = np.zeros((N, H, man.value_dim))
    mask = np.zeros((N, H, man.mask_dim), bool)
    spec = config.subset
    if spec is None or N == 0:
        return FeatureBlock(values, mask, man)

    if spec.dim == 3:
        kv = window.kp3d_valid[:, :H]
        other = window.kp2d_valid[:, :H]
    else:
        kv = window.kp2d_valid[:, :H]
        other = window.kp3d_valid[:, :H]
    if not kv.any() and other.any():
        have = "2D" if spec.dim == 3 else "3D"
        bad = [window.agent_ids[i] for i in np.flatnonzero(other.any(axis=(1, 2)))]
        raise ValueError(
            f"config {config.value} needs {spec.dim}D keypoints but window "
            f"{window.scene_id}@{window.start} only has {have} skeletons (agents: {bad})"
        )

    width = window.image_size[0] if window.image_size else None
    nk = spec.size * spec.dim
    for i in range(N):
        for t in range(H):
            if not window.pos_valid[i, t]:
                continue
            if spec.dim == 3:
                v, m = select_keypoints(window.kp3d[i, t], window.kp3d_valid[i, t], spec,
                                        window.pos[i, t])
            else:
                v, m = select_keypoints(window.kp2d[i, t], window.kp2d_valid[i, t], spec,
                                        image_width=width)
            values[i, t, :nk] = v
            mask[i, t, : spec.size] = m
            if config.cues:
                cv, cm = derive_cues(window.kp3d[i, t], window.kp3d_valid[i, t], config.cues)
                values[i, t, nk:] = np.where(cm, cv, 0.0)
                mask[i, t, spec.size:] = cm
    return FeatureBlock(values, mask, man)
