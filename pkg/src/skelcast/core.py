"""Domain types, frame transforms and scene windowing.

Coordinate conventions used throughout the package:

* World and egocentric frames are right-handed with z up.
* A robot pose is ``(x, y, yaw)``; yaw is counter-clockwise positive and
  the robot's forward axis is +x at ``yaw == 0``.
* Scene files store agent positions and 3D keypoints in the world frame.
  :func:`build_windows` re-expresses them in the robot frame anchored at
  the first past timestep of every window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

N_KP3D = 33
N_KP2D = 17
DEFAULT_RATE_HZ = 3.0
DEFAULT_H = 6
DEFAULT_F = 12


@dataclass
class AgentTrack:
    """Ground-plane positions of one agent, dense over the scene's frames.

    ``pos`` holds NaN wherever ``pos_valid`` is False.
    """

    agent_id: str
    pos: np.ndarray  # (T, 2) meters
    pos_valid: np.ndarray  # (T,) bool

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=np.float64).reshape(-1, 2)
        self.pos_valid = np.asarray(self.pos_valid, dtype=bool).reshape(-1)
        if len(self.pos) != len(self.pos_valid):
            raise ValueError(f"agent {self.agent_id}: pos/pos_valid length mismatch")
        if not np.all(np.isfinite(self.pos[self.pos_valid])):
            raise ValueError(f"agent {self.agent_id}: non-finite position marked valid")

    def __len__(self):
        return len(self.pos)


@dataclass
class SkeletonSeq:
    """Per-frame keypoints of one agent.

    kp3d is (T, 33, 3) meters in the same frame as the positions; kp2d is
    (T, 17, 3) holding (u, v, confidence) in panorama pixels.
    """

    agent_id: str
    kp3d: np.ndarray
    kp3d_valid: np.ndarray
    kp2d: np.ndarray
    kp2d_valid: np.ndarray

    def __post_init__(self):
        self.kp3d = np.asarray(self.kp3d, dtype=np.float64).reshape(-1, N_KP3D, 3)
        self.kp3d_valid = np.asarray(self.kp3d_valid, dtype=bool).reshape(-1, N_KP3D)
        self.kp2d = np.asarray(self.kp2d, dtype=np.float64).reshape(-1, N_KP2D, 3)
        self.kp2d_valid = np.asarray(self.kp2d_valid, dtype=bool).reshape(-1, N_KP2D)
        n = len(self.kp3d)
        if not (len(self.kp3d_valid) == len(self.kp2d) == len(self.kp2d_valid) == n):
            raise ValueError(f"agent {self.agent_id}: skeleton arrays disagree on length")
        if not np.all(np.isfinite(self.kp3d[self.kp3d_valid])):
            raise ValueError(f"agent {self.agent_id}: non-finite 3D keypoint marked valid")
        if not np.all(np.isfinite(self.kp2d[self.kp2d_valid][:, :2])):
            raise ValueError(f"agent {self.agent_id}: non-finite 2D keypoint marked valid")

    @classmethod
    def empty(cls, agent_id: str, n_frames: int) -> "SkeletonSeq":
        return cls(
            agent_id,
            np.full((n_frames, N_KP3D, 3), np.nan),
            np.zeros((n_frames, N_KP3D), bool),
            np.full((n_frames, N_KP2D, 3), np.nan),
            np.zeros((n_frames, N_KP2D), bool),
        )

    def __len__(self):
        return len(self.kp3d)


@dataclass
class Agent:
    track: AgentTrack
    skeleton: SkeletonSeq

    @property
    def agent_id(self) -> str:
        return self.track.agent_id


@dataclass
class Scene:
    """A recorded sequence in the world frame.

    Frame ``i`` of every agent array corresponds to ``robot_poses[i]``.
    """

    scene_id: str
    dt: float
    robot_poses: np.ndarray  # (T, 3)
    agents: list[Agent] = field(default_factory=list)
    image_size: Optional[tuple[int, int]] = None  # (W, H)
    camera_height_m: Optional[float] = None

    def __post_init__(self):
        self.robot_poses = np.asarray(self.robot_poses, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.robot_poses)):
            raise ValueError(f"scene {self.scene_id}: non-finite robot pose")
        for a in self.agents:
            if len(a.track) != self.n_frames or len(a.skeleton) != self.n_frames:
                raise ValueError(
                    f"scene {self.scene_id}: agent {a.agent_id} has "
                    f"{len(a.track)} frames, scene has {self.n_frames}"
                )

    @property
    def n_frames(self) -> int:
        return len(self.robot_poses)


@dataclass(frozen=True)
class SceneWindow:
    """H past + F future frames of all agents, in the egocentric frame at t0.

    Array axes are (agent, time, ...). ``kp2d`` stays in image pixels.
    """

    scene_id: str
    start: int
    dt: float
    H: int
    F: int
    robot_pose_t0: np.ndarray
    agent_ids: tuple
    pos: np.ndarray  # (N, H+F, 2)
    pos_valid: np.ndarray  # (N, H+F)
    kp3d: np.ndarray  # (N, H+F, 33, 3)
    kp3d_valid: np.ndarray  # (N, H+F, 33)
    kp2d: np.ndarray  # (N, H+F, 17, 3)
    kp2d_valid: np.ndarray  # (N, H+F, 17)
    image_size: Optional[tuple[int, int]] = None

    @property
    def n_agents(self) -> int:
        return len(self.agent_ids)

    @property
    def past_pos(self) -> np.ndarray:
        return self.pos[:, : self.H]

    @property
    def past_valid(self) -> np.ndarray:
        return self.pos_valid[:, : self.H]

    @property
    def future_pos(self) -> np.ndarray:
        return self.pos[:, self.H :]

    @property
    def future_valid(self) -> np.ndarray:
        return self.pos_valid[:, self.H :]

    def has_keypoints(self) -> np.ndarray:
        """(N,) True where the agent has any valid keypoint in the past frames."""
        h = self.H
        return self.kp3d_valid[:, :h].any(axis=(1, 2)) | self.kp2d_valid[:, :h].any(axis=(1, 2))

    def subset(self, idx: Sequence[int]) -> "SceneWindow":
        idx = np.asarray(idx, dtype=int)
        return SceneWindow(
            self.scene_id, self.start, self.dt, self.H, self.F, self.robot_pose_t0,
            tuple(self.agent_ids[i] for i in idx),
            self.pos[idx], self.pos_valid[idx], self.kp3d[idx], self.kp3d_valid[idx],
            self.kp2d[idx], self.kp2d_valid[idx], self.image_size,
        )


def _rotation(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


def to_egocentric(world_pos, robot_pose) -> np.ndarray:
    """Express world-frame points in the frame of ``robot_pose = (x, y, yaw)``.

    Computes ``R(-yaw) @ (p - (x, y))``. ``world_pos`` may be a single
    2-vector or any array with trailing dimension 2.
    """
    p = np.asarray(world_pos, dtype=np.float64)
    pose = np.asarray(robot_pose, dtype=np.float64)
    if p.shape[-1] != 2 or pose.shape != (3,):
        raise ValueError("expected (..., 2) positions and a (3,) pose")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(pose))):
        raise ValueError("to_egocentric: non-finite input")
    d = p - pose[:2]
    return d @ _rotation(-pose[2]).T


def from_egocentric(ego_pos, robot_pose) -> np.ndarray:
    """Inverse of :func:`to_egocentric`."""
    p = np.asarray(ego_pos, dtype=np.float64)
    pose = np.asarray(robot_pose, dtype=np.float64)
    return p @ _rotation(pose[2]).T + pose[:2]


def _ego_masked(points: np.ndarray, valid: np.ndarray, pose: np.ndarray) -> np.ndarray:
    """to_egocentric on the valid entries only; invalid entries become NaN."""
    out = np.full(points.shape, np.nan)
    if valid.any():
        out[valid] = to_egocentric(points[valid], pose)
    return out


def subsample(scene: Scene, source_rate_hz: float, target_rate_hz: float = DEFAULT_RATE_HZ) -> Scene:
    """Keep every k-th frame, k = round(source / target).

    Raises ValueError when the ratio is more than 1% away from an integer.
    """
    ratio = source_rate_hz / target_rate_hz
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 0.01 * ratio:
        raise ValueError(
            f"source rate {source_rate_hz} Hz is not an integer multiple of "
            f"target rate {target_rate_hz} Hz"
        )
    if k == 1:
        return scene
    sl = slice(0, None, k)
    agents = [
        Agent(
            AgentTrack(a.agent_id, a.track.pos[sl], a.track.pos_valid[sl]),
            SkeletonSeq(
                a.agent_id, a.skeleton.kp3d[sl], a.skeleton.kp3d_valid[sl],
                a.skeleton.kp2d[sl], a.skeleton.kp2d_valid[sl],
            ),
        )
        for a in scene.agents
    ]
    return Scene(
        scene.scene_id, scene.dt * k, scene.robot_poses[sl], agents,
        scene.image_size, scene.camera_height_m,
    )


def build_windows(scene: Scene, H: int = DEFAULT_H, F: int = DEFAULT_F, stride: Optional[int] = None) -> list[SceneWindow]:
    """Slice a scene into egocentric windows of H past and F future frames.

    Windows start at frame offsets 0, stride, 2*stride, ... and are kept
    while they fit entirely inside the scene. Agents with no valid past
    position are dropped. Missing frames stay masked.
    """
    if H < 1 or F < 1:
        raise ValueError("H and F must be >= 1")
    stride = H if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be >= 1")
    L = H + F
    windows = []
    for s in range(0, scene.n_frames - L + 1, stride):
        pose = scene.robot_poses[s]
        kept = [a for a in scene.agents if a.track.pos_valid[s : s + H].any()]
        n = len(kept)
        pos = np.full((n, L, 2), np.nan)
        pos_valid = np.zeros((n, L), bool)
        kp3d = np.full((n, L, N_KP3D, 3), np.nan)
        kp3d_valid = np.zeros((n, L, N_KP3D), bool)
        kp2d = np.full((n, L, N_KP2D, 3), np.nan)
        kp2d_valid = np.zeros((n, L, N_KP2D), bool)
        for i, a in enumerate(kept):
            tv = a.track.pos_valid[s : s + L]
            pos[i] = _ego_masked(a.track.pos[s : s + L], tv, pose)
            pos_valid[i] = tv
            kv = a.skeleton.kp3d_valid[s : s + L]
            k3 = a.skeleton.kp3d[s : s + L]
            kp3d[i, ..., :2] = _ego_masked(k3[..., :2], kv, pose)
            kp3d[i, ..., 2] = np.where(kv, k3[..., 2], np.nan)
            kp3d_valid[i] = kv
            kv2 = a.skeleton.kp2d_valid[s : s + L]
            kp2d[i] = np.where(kv2[..., None], a.skeleton.kp2d[s : s + L], np.nan)
            kp2d_valid[i] = kv2
        windows.append(
            SceneWindow(
                scene.scene_id, s, scene.dt, H, F, pose.copy(),
                tuple(a.agent_id for a in kept),
                pos, pos_valid, kp3d, kp3d_valid, kp2d, kp2d_valid, scene.image_size,
            )
        )
    return windows
