"""JSONL scene files, one scene per line.

Line layout::

    {"scene_id": str, "dt": float,
     "image_size": [W, H] | null, "camera_height_m": float | null,
     "robot_poses": [[x, y, yaw], ...],
     "agents": [{"id": str,
                 "frames": [{"t": int,
                             "pos": [x, y] | null,
                             "kp3d": [[x, y, z] | null] * 33 | null,
                             "kp3d_valid": [bool] * 33,
                             "kp2d": [[u, v, c] | null] * 17 | null,
                             "kp2d_valid": [bool] * 17}, ...]}, ...]}

``t`` indexes ``robot_poses``. Positions and 3D keypoints are world-frame
meters, yaw is radians counter-clockwise with +x forward at yaw 0, and 2D
keypoints are equirectangular pixels. Frames an agent is absent from are
omitted; keypoint rows that are invalid are written as null.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator, Union

import numpy as np

from .core import Agent, AgentTrack, Scene, SkeletonSeq

PathLike = Union[str, Path]
_DECIMALS = 4


def _r(x: float) -> float:
    v = round(float(x), _DECIMALS)
    return 0.0 if v == 0 else v  # normalize -0.0 so output bytes are stable


def _rows(arr: np.ndarray, valid: np.ndarray):
    return [[_r(c) for c in row] if ok else None for row, ok in zip(arr, valid)]


def scene_to_dict(scene: Scene) -> dict:
    agents = []
    for a in scene.agents:
        frames = []
        tr, sk = a.track, a.skeleton
        for t in range(scene.n_frames):
            has3 = bool(sk.kp3d_valid[t].any())
            has2 = bool(sk.kp2d_valid[t].any())
            if not (tr.pos_valid[t] or has3 or has2):
                continue
            frames.append({
                "t": t,
                "pos": [_r(tr.pos[t, 0]), _r(tr.pos[t, 1])] if tr.pos_valid[t] else None,
                "kp3d": _rows(sk.kp3d[t], sk.kp3d_valid[t]) if has3 else None,
                "kp3d_valid": [bool(v) for v in sk.kp3d_valid[t]],
                "kp2d": _rows(sk.kp2d[t], sk.kp2d_valid[t]) if has2 else None,
                "kp2d_valid": [bool(v) for v in sk.kp2d_valid[t]],
            })
        agents.append({"id": a.agent_id, "frames": frames})
    return {
        "scene_id": scene.scene_id,
        "dt": scene.dt,
        "image_size": list(scene.image_size) if scene.image_size else None,
        "camera_height_m": scene.camera_height_m,
        "robot_poses": [[_r(v) for v in p] for p in scene.robot_poses],
        "agents": agents,
    }


def _fill(dst: np.ndarray, valid: np.ndarray, rows, flags, width: int):
    if rows is None:
        return
    for j, row in enumerate(rows):
        ok = bool(flags[j]) if flags is not None else row is not None
        if ok and row is not None:
            dst[j] = np.asarray(row, dtype=np.float64)[:width]
            valid[j] = True


def scene_from_dict(d: dict) -> Scene:
    poses = np.asarray(d["robot_poses"], dtype=np.float64).reshape(-1, 3)
    T = len(poses)
    agents = []
    for ad in d.get("agents", []):
        aid = str(ad["id"])
        pos = np.full((T, 2), np.nan)
        pv = np.zeros(T, bool)
        sk = SkeletonSeq.empty(aid, T)
        for fr in ad["frames"]:
            t = int(fr["t"])
            if not 0 <= t < T:
                raise ValueError(f"scene {d['scene_id']}: agent {aid} frame t={t} outside 0..{T - 1}")
            if fr.get("pos") is not None:
                pos[t] = fr["pos"]
                pv[t] = True
            _fill(sk.kp3d[t], sk.kp3d_valid[t], fr.get("kp3d"), fr.get("kp3d_valid"), 3)
            _fill(sk.kp2d[t], sk.kp2d_valid[t], fr.get("kp2d"), fr.get("kp2d_valid"), 3)
        agents.append(Agent(AgentTrack(aid, pos, pv), SkeletonSeq(aid, sk.kp3d, sk.kp3d_valid, sk.kp2d, sk.kp2d_valid)))
    size = d.get("image_size")
    return Scene(
        str(d["scene_id"]), float(d["dt"]), poses, agents,
        tuple(int(v) for v in size) if size else None,
        d.get("camera_height_m"),
    )


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), separators=(",", ":"))


def write_scenes(path: PathLike, scenes: Iterable[Scene]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sc in scenes:
            fh.write(dumps_scene(sc))
            fh.write("\n")
            n += 1
    return n


def iter_scenes(path: PathLike) -> Iterator[Scene]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield scene_from_dict(json.loads(line))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc


def read_scenes(path: PathLike) -> list[Scene]:
    return list(iter_scenes(path))
