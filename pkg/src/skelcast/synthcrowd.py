"""Synthetic crowds with kinematic gait skeletons.

Pedestrians follow a social-force style model (goal attraction, pairwise
exponential repulsion, velocity relaxation) at 30 Hz. Skeletons are built
geometrically from each track. The legs are oriented along the velocity
``leg_lead_s`` seconds ahead and the head along the velocity
``head_lead_s`` ahead plus noise, so lower-body keypoints carry an
anticipatory cue about upcoming turns and starts. 2D keypoints come from
projecting the 3D skeleton into the robot's equirectangular camera.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import skelfeat as sf
from .core import N_KP2D, N_KP3D, Agent, AgentTrack, Scene, SkeletonSeq, subsample, to_egocentric
from .panogeom import CameraModel, point_to_pixel
from .scenefile import write_scenes

SIM_RATE_HZ = 30.0

# body dimensions, meters
HIP_HEIGHT = 0.93
HIP_HALF_WIDTH = 0.09
THIGH = 0.47
SHANK = 0.47
SHOULDER_HEIGHT = 1.45
SHOULDER_HALF_WIDTH = 0.18
UPPER_ARM = 0.30
FOREARM = 0.27
ELBOW_BEND = 0.25  # rad, constant forearm flexion while walking

# 33-point index -> COCO-17 index
COCO_FROM_33 = np.array([0, 2, 5, 7, 8, 11, 12, 13, 14, 15, 16, 23, 24, 25, 26, 27, 28])


@dataclass
class SimConfig:
    n_agents: int = 6
    arena_m: float = 12.0
    duration_s: float = 30.0
    speed_range: tuple = (0.8, 1.5)
    waypoint_spacing: tuple = (1.5, 4.0)
    dwell_prob: float = 0.3
    dwell_range_s: tuple = (0.5, 2.0)
    arrive_radius_m: float = 0.3
    relax_time_s: float = 0.5
    repulsion_gain: float = 2.0  # m/s^2
    repulsion_radius: float = 0.3  # m, decay length
    body_radius: float = 0.25
    side_bias: float = 0.3  # fraction of repulsion turned to the right, breaks head-on deadlocks
    lookahead_s: float = 0.5  # repulsion also sees the gap predicted this far ahead
    max_speed_factor: float = 1.3
    step_freq_coef: float = 1.4  # Hz per m/s
    step_len_coef: float = 0.5  # m per m/s
    foot_lift_coef: float = 0.15  # peak ankle lift per meter of stride amplitude
    ankle_height_m: float = 0.05
    leg_lead_s: float = 0.6
    head_lead_s: float = 0.3
    head_noise_rad: float = 0.25
    kp3d_noise_m: float = 0.01
    kp2d_noise_px: float = 1.0
    kp_dropout: float = 0.02
    sensor_range_m: float = 8.0
    vfov_deg: Optional[float] = None  # None = full vertical coverage
    robot_speed: float = 0.6
    image_width: int = 1920
    image_height: int = 960
    camera_height_m: float = 0.85
    starts: Optional[list] = None  # explicit (x, y) per agent
    goals: Optional[list] = None  # explicit waypoint list per agent; no random re-targeting
    with_robot: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.leg_lead_s < 0 or self.head_lead_s < 0:
            raise ValueError("leads must be non-negative")
        if not 0 < self.speed_range[0] <= self.speed_range[1]:
            raise ValueError("speeds must be positive")
        self.speed_range = tuple(self.speed_range)
        self.waypoint_spacing = tuple(self.waypoint_spacing)
        self.dwell_range_s = tuple(self.dwell_range_s)

    @property
    def camera(self) -> CameraModel:
        return CameraModel(self.image_width, self.image_height, self.camera_height_m)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class SimResult:
    pos: np.ndarray  # (A, T, 2) pedestrians
    vel: np.ndarray  # (A, T, 2)
    robot_pos: np.ndarray  # (T, 2)
    robot_vel: np.ndarray
    robot_yaw: np.ndarray  # (T,)
    dt: float = 1.0 / SIM_RATE_HZ
    extra: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# crowd dynamics


def _sample_waypoint(rng, origin, cfg: SimConfig):
    half = cfg.arena_m / 2 - 0.5
    for _ in range(20):
        ang = rng.uniform(-math.pi, math.pi)
        dist = rng.uniform(*cfg.waypoint_spacing)
        p = origin + dist * np.array([math.cos(ang), math.sin(ang)])
        if np.all(np.abs(p) <= half):
            return p
    return np.clip(p, -half, half)


def _initial_positions(rng, n, cfg: SimConfig):
    half = cfg.arena_m / 2 - 0.5
    pts = []
    while len(pts) < n:
        p = rng.uniform(-half, half, size=2)
        if all(np.linalg.norm(p - q) > 4 * cfg.body_radius for q in pts):
            pts.append(p)
    return np.array(pts).reshape(n, 2)


def simulate(cfg: SimConfig) -> SimResult:
    """Integrate the crowd at 30 Hz. The robot, when enabled, is the last body."""
    rng = np.random.default_rng([cfg.seed, 1])
    dt = 1.0 / SIM_RATE_HZ
    T = int(round(cfg.duration_s * SIM_RATE_HZ))
    A = cfg.n_agents
    n = A + (1 if cfg.with_robot else 0)

    pos = np.array(cfg.starts, dtype=np.float64).reshape(A, 2) if cfg.starts is not None else _initial_positions(rng, A, cfg)
    if cfg.with_robot:
        pos = np.vstack([pos, _initial_positions(rng, 1, cfg)])
    speeds = rng.uniform(*cfg.speed_range, size=n)
    if cfg.with_robot:
        speeds[-1] = cfg.robot_speed
    scripted = cfg.goals is not None
    if scripted:
        plans = [[np.asarray(g, dtype=np.float64) for g in gl] for gl in cfg.goals]
        goals = np.array([p[0] for p in plans])
        if cfg.with_robot:
            goals = np.vstack([goals, _sample_waypoint(rng, pos[-1], cfg)])
    else:
        goals = np.array([_sample_waypoint(rng, pos[i], cfg) for i in range(n)])
    plan_idx = np.zeros(n, dtype=int)
    dwell = np.zeros(n)
    vel = np.zeros((n, 2))

    P = np.zeros((n, T, 2))
    V = np.zeros((n, T, 2))
    for k in range(T):
        P[:, k], V[:, k] = pos, vel
        # goal bookkeeping
        d_goal = goals - pos
        dist = np.linalg.norm(d_goal, axis=1)
        for i in range(n):
            if dwell[i] > 0:
                dwell[i] -= dt
                continue
            if dist[i] < cfg.arrive_radius_m:
                is_robot = cfg.with_robot and i == n - 1
                if scripted and not is_robot:
                    if plan_idx[i] + 1 < len(plans[i]):
                        plan_idx[i] += 1
                        goals[i] = plans[i][plan_idx[i]]
                    continue
                goals[i] = _sample_waypoint(rng, goals[i], cfg)
                if not is_robot and rng.random() < cfg.dwell_prob:
                    dwell[i] = rng.uniform(*cfg.dwell_range_s)
        d_goal = goals - pos
        dist = np.linalg.norm(d_goal, axis=1)
        e = d_goal / np.maximum(dist, 1e-9)[:, None]
        want = speeds.copy()
        want[dwell > 0] = 0.0
        if scripted:  # home onto the final goal instead of orbiting it
            final = np.array([plan_idx[i] == len(plans[i]) - 1 for i in range(A)] + [False] * (n - A))
            want = np.where(final, np.minimum(want, dist / cfg.relax_time_s), want)
        force = (want[:, None] * e - vel) / cfg.relax_time_s

        diff = pos[:, None] - pos[None]  # i - j
        r = np.linalg.norm(diff, axis=-1)
        np.fill_diagonal(r, np.inf)
        nrm = diff / r[..., None]
        # effective gap: the smaller of the current and the extrapolated separation
        ahead = np.linalg.norm(diff + cfg.lookahead_s * (vel[:, None] - vel[None]), axis=-1)
        r_eff = np.minimum(r, ahead)
        mag = cfg.repulsion_gain * np.exp(-(r_eff - 2 * cfg.body_radius) / cfg.repulsion_radius)
        right = np.stack([nrm[..., 1], -nrm[..., 0]], axis=-1)
        rep = mag[..., None] * ((1 - cfg.side_bias) * nrm + cfg.side_bias * right)
        force = force + np.nansum(rep, axis=1)

        vel = vel + dt * force
        sp = np.linalg.norm(vel, axis=1)
        cap = cfg.max_speed_factor * np.maximum(speeds, 1e-9)
        vel = vel * np.minimum(1.0, cap / np.maximum(sp, 1e-12))[:, None]
        pos = pos + dt * vel

    if cfg.with_robot:
        rp, rv = P[-1], V[-1]
        yaw = _heading(rv, 0.05)
        return SimResult(P[:A], V[:A], rp, rv, yaw, dt)
    zeros = np.zeros((T, 2))
    return SimResult(P, V, zeros, zeros, np.zeros(T), dt)


def _heading(vel: np.ndarray, min_speed: float = 0.1) -> np.ndarray:
    """Direction of travel per frame; held through slow/stationary stretches."""
    sp = np.linalg.norm(vel, axis=-1)
    ang = np.arctan2(vel[:, 1], vel[:, 0])
    moving = np.flatnonzero(sp > min_speed)
    out = np.zeros(len(vel))
    if moving.size == 0:
        return out
    cur = ang[moving[0]]
    for k in range(len(vel)):
        if sp[k] > min_speed:
            cur = ang[k]
        out[k] = cur
    return out


# --------------------------------------------------------------------------
# skeletons


def _shift(arr: np.ndarray, lead_frames: int) -> np.ndarray:
    """arr[t + lead], clamped at the end of the track."""
    T = len(arr)
    idx = np.minimum(np.arange(T) + lead_frames, T - 1)
    return arr[idx]


def _knee(hip, ankle, fwd):
    """Two-segment leg IK; bends the knee toward ``fwd``. Pulls unreachable ankles in."""
    d_vec = ankle - hip
    d = np.linalg.norm(d_vec, axis=-1, keepdims=True)
    reach = 0.999 * (THIGH + SHANK)
    too_far = d > reach
    ankle = np.where(too_far, hip + d_vec * (reach / d), ankle)
    d_vec = ankle - hip
    d = np.minimum(d, reach)
    u = d_vec / d
    a = (THIGH**2 - SHANK**2 + d**2) / (2 * d)
    hk = np.sqrt(np.maximum(THIGH**2 - a**2, 0.0))
    b = fwd - np.sum(fwd * u, axis=-1, keepdims=True) * u
    b = b / np.maximum(np.linalg.norm(b, axis=-1, keepdims=True), 1e-12)
    return hip + a * u + hk * b, ankle


def _h(v2, z):
    """Lift (T, 2) ground vectors to (T, 3) with height z."""
    z = np.broadcast_to(np.asarray(z, dtype=np.float64), v2.shape[:1])
    return np.concatenate([v2, z[:, None]], axis=1)


def _unit(yaw):
    return np.stack([np.cos(yaw), np.sin(yaw)], axis=-1)


def gait_kinematics(pos, vel, cfg: SimConfig, rng=None):
    """Noise-free 33-point skeleton for one 30 Hz track.

    Returns kp3d (T, 33, 3) and a dict of the intermediate signals
    (leg heading, head yaw, stride amplitude, phase).
    """
    T = len(pos)
    dt = 1.0 / SIM_RATE_HZ
    lead_leg = int(round(cfg.leg_lead_s * SIM_RATE_HZ))
    lead_head = int(round(cfg.head_lead_s * SIM_RATE_HZ))
    v_leg = _shift(vel, lead_leg)
    leg_yaw = _heading(v_leg)
    torso_yaw = _heading(vel)
    head_yaw = _heading(_shift(vel, lead_head))
    if rng is not None and cfg.head_noise_rad > 0:
        head_yaw = head_yaw + rng.normal(0.0, cfg.head_noise_rad, T)
    speed = np.linalg.norm(v_leg, axis=1)
    amp = cfg.step_len_coef * speed
    phase = 2 * np.pi * np.cumsum(cfg.step_freq_coef * speed * dt)
    phase = np.concatenate([[0.0], phase[:-1]])

    f = _unit(leg_yaw)
    l = np.stack([-f[:, 1], f[:, 0]], axis=1)
    ft = _unit(torso_yaw)
    lt = np.stack([-ft[:, 1], ft[:, 0]], axis=1)
    fh = _unit(head_yaw)
    lh = np.stack([-fh[:, 1], fh[:, 0]], axis=1)
    f3 = _h(f, 0.0)

    kp = np.zeros((T, N_KP3D, 3))
    s = np.sin(phase)
    c = np.cos(phase)
    for side, sign in (("L", 1.0), ("R", -1.0)):
        hip = _h(pos + sign * HIP_HALF_WIDTH * l, HIP_HEIGHT)
        stride = sign * 0.5 * amp * s
        swing = np.maximum(0.0, sign * c)
        ankle = _h(pos + sign * HIP_HALF_WIDTH * l + stride[:, None] * f,
                   cfg.ankle_height_m + cfg.foot_lift_coef * amp * swing)
        knee, ankle = _knee(hip, ankle, f3)
        heel = ankle - 0.05 * f3 - np.array([0, 0, 0.03])
        toe = ankle + 0.15 * f3 - np.array([0, 0, 0.04])
        heel[:, 2] = np.maximum(heel[:, 2], 0.01)
        toe[:, 2] = np.maximum(toe[:, 2], 0.01)
        i = 0 if side == "L" else 1
        kp[:, sf.L_HIP + i] = hip
        kp[:, sf.L_KNEE + i] = knee
        kp[:, sf.L_ANKLE + i] = ankle
        kp[:, 29 + i] = heel
        kp[:, 31 + i] = toe

        # arms swing against the same-side leg
        sh = _h(pos + sign * SHOULDER_HALF_WIDTH * lt, SHOULDER_HEIGHT)
        alpha = -0.8 * amp * sign * s
        ft3 = _h(ft, 0.0)
        down = np.array([0.0, 0.0, -1.0])
        upper = np.cos(alpha)[:, None] * down + np.sin(alpha)[:, None] * ft3
        fore_a = alpha + ELBOW_BEND
        fore = np.cos(fore_a)[:, None] * down + np.sin(fore_a)[:, None] * ft3
        elbow = sh + UPPER_ARM * upper
        wrist = elbow + FOREARM * fore
        kp[:, sf.L_SHOULDER + i] = sh
        kp[:, sf.L_ELBOW + i] = elbow
        kp[:, sf.L_WRIST + i] = wrist
        lat = _h(sign * lt, 0.0)
        kp[:, 17 + i] = wrist + 0.08 * fore + 0.02 * lat  # pinky
        kp[:, 19 + i] = wrist + 0.09 * fore  # index
        kp[:, 21 + i] = wrist + 0.05 * fore - 0.02 * lat + 0.02 * ft3  # thumb

        # face
        eye = pos + 0.08 * fh + sign * 0.03 * lh
        kp[:, 1 + 3 * i] = _h(eye - sign * 0.015 * lh, 1.65)  # inner
        kp[:, 2 + 3 * i] = _h(eye, 1.65)
        kp[:, 3 + 3 * i] = _h(eye + sign * 0.015 * lh, 1.65)  # outer
        kp[:, sf.L_EAR + i] = _h(pos - 0.01 * fh + sign * 0.075 * lh, 1.62)
        kp[:, 9 + i] = _h(pos + 0.09 * fh + sign * 0.025 * lh, 1.57)
    kp[:, sf.NOSE] = _h(pos + 0.11 * fh, 1.62)
    info = {"leg_yaw": leg_yaw, "head_yaw": head_yaw, "torso_yaw": torso_yaw, "amp": amp, "phase": phase}
    return kp, info


def synthesize_skeleton(agent_id: str, pos, vel, robot_poses, cfg: SimConfig, rng) -> SkeletonSeq:
    """Noisy 3D + projected 2D keypoints of one agent (30 Hz)."""
    T = len(pos)
    kp, _ = gait_kinematics(pos, vel, cfg, rng)
    if cfg.kp3d_noise_m > 0:
        kp = kp + rng.normal(0.0, cfg.kp3d_noise_m, kp.shape)
        kp[..., 2] = np.maximum(kp[..., 2], 0.0)
    rng_ok = np.linalg.norm(pos - robot_poses[:, :2], axis=1) <= cfg.sensor_range_m
    v3 = np.repeat(rng_ok[:, None], N_KP3D, axis=1)
    if cfg.kp_dropout > 0:
        v3 &= rng.random(v3.shape) >= cfg.kp_dropout

    cam = cfg.camera
    kp2 = np.full((T, N_KP2D, 3), np.nan)
    sel = kp[:, COCO_FROM_33]
    ego = np.empty_like(sel)
    for t in range(T):
        ego[t, :, :2] = to_egocentric(sel[t, :, :2], robot_poses[t])
    ego[..., 2] = sel[..., 2]
    u, v = point_to_pixel(ego, cam)
    if cfg.kp2d_noise_px > 0:
        u = (u + rng.normal(0.0, cfg.kp2d_noise_px, u.shape)) % cam.width
        v = v + rng.normal(0.0, cfg.kp2d_noise_px, v.shape)
    v2 = np.repeat(rng_ok[:, None], N_KP2D, axis=1) & (v >= 0) & (v < cam.height)
    if cfg.vfov_deg is not None:
        half = math.radians(cfg.vfov_deg) / 2
        elev = math.pi / 2 - math.pi * v / cam.height
        v2 &= np.abs(elev) <= half
    if cfg.kp_dropout > 0:
        v2 &= rng.random(v2.shape) >= cfg.kp_dropout
    kp2[..., 0], kp2[..., 1], kp2[..., 2] = u, v, 1.0
    kp2[~v2] = np.nan
    kp = np.where(v3[..., None], kp, np.nan)
    return SkeletonSeq(agent_id, kp, v3, kp2, v2)


def make_scene(cfg: SimConfig, scene_id: Optional[str] = None) -> Scene:
    """Simulate one scene at 30 Hz with skeletons (not yet subsampled)."""
    sim = simulate(cfg)
    rng = np.random.default_rng([cfg.seed, 2])
    robot_poses = np.column_stack([sim.robot_pos, sim.robot_yaw])
    T = robot_poses.shape[0]
    agents = []
    for i in range(cfg.n_agents):
        aid = f"p{i}"
        sk = synthesize_skeleton(aid, sim.pos[i], sim.vel[i], robot_poses, cfg, rng)
        agents.append(Agent(AgentTrack(aid, sim.pos[i], np.ones(T, bool)), sk))
    return Scene(scene_id or f"synth-{cfg.seed}", sim.dt, robot_poses, agents,
                 (cfg.image_width, cfg.image_height), cfg.camera_height_m)


# --------------------------------------------------------------------------
# datasets


def split_counts(n: int, ratios: Sequence[float]) -> list[int]:
    """Scene counts per split; rounding remainder goes to the first split."""
    if n <= 0:
        raise ValueError("at least one scene is required")
    tot = float(sum(ratios))
    if tot <= 0 or any(r < 0 for r in ratios):
        raise ValueError(f"bad split ratios {ratios}")
    rest = [int(round(n * r / tot)) for r in ratios[1:]]
    first = n - sum(rest)
    if first < 0:
        raise ValueError(f"split ratios {ratios} over-allocate {n} scenes")
    return [first] + rest


SPLITS = ("train", "val", "test")


def make_dataset(base: SimConfig, n_scenes: int, out_dir, ratios=(0.8, 0.1, 0.1),
                 target_rate_hz: float = 3.0, force: bool = False) -> Path:
    """Write train/val/test JSONL files plus ``manifest.json``; returns the manifest path.

    Scene ``i`` uses seed ``base.seed * 1_000_003 + i`` so splits never
    share a seed.
    """
    out = Path(out_dir)
    counts = split_counts(n_scenes, ratios)
    paths = {s: out / f"{s}.jsonl" for s in SPLITS}
    man_path = out / "manifest.json"
    existing = [p for p in [*paths.values(), man_path] if p.exists()]
    if existing and not force:
        raise FileExistsError(f"{existing[0]} exists; pass force to overwrite")
    out.mkdir(parents=True, exist_ok=True)

    seeds = [base.seed * 1_000_003 + i for i in range(n_scenes)]
    files = {}
    k = 0
    for split, cnt in zip(SPLITS, counts):
        scenes = []
        for s in seeds[k : k + cnt]:
            sc = make_scene(replace(base, seed=s), scene_id=f"{split}-{s}")
            scenes.append(subsample(sc, SIM_RATE_HZ, target_rate_hz))
        k += cnt
        write_scenes(paths[split], scenes)
        files[split] = {"path": paths[split].name, "scenes": cnt,
                        "sha256": hashlib.sha256(paths[split].read_bytes()).hexdigest()}
    manifest = {
        "generator": "skelcast.synthcrowd",
        "n_scenes": n_scenes,
        "ratios": list(ratios),
        "target_rate_hz": target_rate_hz,
        "sim_rate_hz": SIM_RATE_HZ,
        "seed_rule": "base_seed * 1000003 + scene_index",
        "sim_config": base.to_dict(),
        "files": files,
    }
    man_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return man_path
