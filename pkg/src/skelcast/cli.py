"""Command-line entry point: ``skelcast <command> [options]``.

Commands: synth, project, train, eval, ablate, report. A YAML file given
with ``--config`` supplies nested defaults (sections ``synth``, ``window``,
``model``, ``optim``, ``data``, ``ablate``); explicit flags override it.
Every command that writes output also writes its resolved config.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from . import core, metrics, panogeom, scenefile, synthcrowd
from .skelfeat import FeatureConfig

log = logging.getLogger("skelcast")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# config handling


def load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: config must be a mapping")
    return cfg


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name) or {}
    if not isinstance(sec, dict):
        raise UsageError(f"config section {name!r} must be a mapping")
    return dict(sec)


def _pick(flag, cfg_val, default):
    if flag is not None:
        return flag
    if cfg_val is not None:
        return cfg_val
    return default


def dump_resolved(out_dir: Path, resolved: dict, name: str = "resolved_config.yaml") -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(yaml.safe_dump(resolved, sort_keys=True))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# --------------------------------------------------------------------------
# data


def load_windows(paths: Sequence[str], H: int, F: int, stride: Optional[int]) -> list[core.SceneWindow]:
    windows = []
    for p in paths:
        for scene in scenefile.iter_scenes(p):
            windows.extend(core.build_windows(scene, H, F, stride))
    return windows


def _window_params(args, cfg) -> dict:
    sec = _section(cfg, "window")
    H = int(_pick(getattr(args, "H", None), sec.get("H"), core.DEFAULT_H))
    F = int(_pick(getattr(args, "F", None), sec.get("F"), core.DEFAULT_F))
    stride = _pick(getattr(args, "stride", None), sec.get("stride"), None)
    return {"H": H, "F": F, "stride": int(stride) if stride is not None else H}


def _model_config(args, cfg, features: str, seed: int, win: dict):
    from .predictor import ModelConfig

    sec = _section(cfg, "model")
    sec.update({"feature_config": features, "seed": seed, "H": win["H"], "F": win["F"]})
    if getattr(args, "embed_dim", None):
        sec["embed_dim"] = args.embed_dim
    if getattr(args, "num_layers", None):
        sec["num_layers"] = args.num_layers
    return ModelConfig.from_dict(sec)


def _optim_config(args, cfg, seed: int):
    from .predictor import OptimConfig

    sec = _section(cfg, "optim")
    for key in ("epochs", "batch_size", "lr", "weight_decay", "max_steps"):
        val = getattr(args, key, None)
        if val is not None:
            sec[key] = val
    sec.setdefault("shuffle_seed", seed)
    return OptimConfig.from_dict(sec)


# --------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg) -> int:
    sec = _section(cfg, "synth")
    n = _pick(args.scenes, sec.pop("scenes", None), None)
    if n is None:
        raise UsageError("synth needs --scenes (or synth.scenes in the config)")
    ratios = tuple(_pick(args.ratios, sec.pop("ratios", None), (0.8, 0.1, 0.1)))
    seed = int(_pick(args.seed, sec.pop("seed", None), 0))
    rate = float(sec.pop("target_rate_hz", core.DEFAULT_RATE_HZ))
    sim = synthcrowd.SimConfig.from_dict({**sec, "seed": seed})
    out = Path(args.out)
    man = synthcrowd.make_dataset(sim, int(n), out, ratios, rate, force=args.force)
    dump_resolved(out, {"command": "synth", "scenes": int(n), "ratios": list(ratios),
                        "target_rate_hz": rate, "sim": _jsonable(sim.to_dict())})
    print(man)
    return EXIT_OK


def project_scene(scene: core.Scene, cam: panogeom.CameraModel, anchor_height_m: float):
    """Replace agent positions by ankle projections; returns (scene, counts)."""
    counts = {"frames_with_kp2d": 0, "projected": 0, "no_ankle": 0, "failed": 0}
    agents = []
    for a in scene.agents:
        T = scene.n_frames
        pos = np.full((T, 2), np.nan)
        ok = np.zeros(T, bool)
        for t in range(T):
            kv = a.skeleton.kp2d_valid[t]
            if not kv.any():
                continue
            counts["frames_with_kp2d"] += 1
            if not (kv[panogeom.COCO_LEFT_ANKLE] or kv[panogeom.COCO_RIGHT_ANKLE]):
                counts["no_ankle"] += 1
                continue
            p, good = panogeom.keypoints_to_position(a.skeleton.kp2d[t], kv, cam, anchor_height_m)
            if not good:
                counts["failed"] += 1
                continue
            pos[t] = core.from_egocentric(p, scene.robot_poses[t])
            ok[t] = True
            counts["projected"] += 1
        agents.append(core.Agent(core.AgentTrack(a.agent_id, pos, ok), a.skeleton))
    return replace(scene, agents=agents), counts


def cmd_project(args, cfg) -> int:
    src, dst = Path(args.input), Path(args.out)
    if src.resolve() == dst.resolve():
        raise UsageError("project never overwrites its input; choose a different --out")
    if dst.exists() and not args.force:
        raise FileExistsError(f"{dst} exists; pass --force to overwrite")
    total = {"frames_with_kp2d": 0, "projected": 0, "no_ankle": 0, "failed": 0}
    out_scenes = []
    for scene in scenefile.iter_scenes(src):
        h = args.camera_height if args.camera_height is not None else scene.camera_height_m
        if h is None:
            raise ValueError(f"scene {scene.scene_id}: camera_height_m missing (use --camera-height)")
        if not scene.image_size:
            raise ValueError(f"scene {scene.scene_id}: image_size missing")
        cam = panogeom.CameraModel(scene.image_size[0], scene.image_size[1], float(h), args.yaw_offset)
        new, counts = project_scene(scene, cam, args.anchor_height)
        for k, v in counts.items():
            total[k] += v
        out_scenes.append(new)
    dst.parent.mkdir(parents=True, exist_ok=True)
    scenefile.write_scenes(dst, out_scenes)
    frac = total["projected"] / max(total["frames_with_kp2d"], 1)
    report = {**total, "fraction_projected": frac, "scenes": len(out_scenes)}
    print(json.dumps(report))
    return EXIT_OK


def _data_paths(args, cfg, key: str):
    sec = _section(cfg, "data")
    val = getattr(args, key, None) or sec.get(key)
    if val is None:
        return []
    return [val] if isinstance(val, str) else list(val)


def train_cell(train_paths, val_paths, features: str, seed: int, win: dict, model_sec: dict,
               optim_sec: dict, out_dir: Path, resume: Optional[str] = None, windows=None):
    """Train one (features, seed) model and write checkpoint + history into ``out_dir``."""
    import torch

    from .predictor import (ModelConfig, OptimConfig, load_checkpoint, save_checkpoint, train,
                            window_items)

    torch.set_num_threads(1)
    mc = ModelConfig.from_dict({**model_sec, "feature_config": features, "seed": seed,
                                "H": win["H"], "F": win["F"]})
    oc = OptimConfig.from_dict({"shuffle_seed": seed, **optim_sec})
    tr_w, va_w = windows if windows is not None else (
        load_windows(train_paths, win["H"], win["F"], win["stride"]),
        load_windows(val_paths, win["H"], win["F"], win["stride"]),
    )
    items = window_items(tr_w, features)
    if features != "NONE" and items:
        k = items[0].manifest.mask_dim
        if not any(it.feats[..., -k:].any() for it in items):
            raise ValueError(f"{features} needs skeleton keypoints but the training data has none")
    val_items = window_items(va_w, features) if va_w else []
    state = load_checkpoint(resume, features, oc) if resume else None
    if state is not None:
        state.model.train()
    st = train(items, mc if state is None else state.model.config, oc, val_items, state)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "checkpoint.npz", st, oc)
    (out_dir / "feature_manifest.json").write_text(st.model.config.manifest.to_json() + "\n")
    (out_dir / "history.json").write_text(json.dumps(st.history, indent=1) + "\n")
    return st


def cmd_train(args, cfg) -> int:
    win = _window_params(args, cfg)
    seed = int(_pick(args.seed, cfg.get("seed"), 0))
    features = FeatureConfig.parse(_pick(args.features, cfg.get("features"), "NONE")).value
    train_paths = _data_paths(args, cfg, "train")
    if not train_paths:
        raise UsageError("train needs --train")
    val_paths = _data_paths(args, cfg, "val")
    mc = _model_config(args, cfg, features, seed, win)
    oc = _optim_config(args, cfg, seed)
    out = Path(args.out)
    if (out / "checkpoint.npz").exists() and not args.force and not args.resume:
        raise FileExistsError(f"{out / 'checkpoint.npz'} exists; pass --force or --resume")
    t0 = time.time()
    st = train_cell(train_paths, val_paths, features, seed, win, mc.to_dict(), oc.to_dict(), out,
                    resume=args.resume)
    dump_resolved(out, {"command": "train", "features": features, "seed": seed, "window": win,
                        "model": mc.to_dict(), "optim": oc.to_dict(), "data": {"train": train_paths,
                        "val": val_paths}, "resume": args.resume})
    last = st.history["epochs"][-1] if st.history["epochs"] else {}
    print(json.dumps({"checkpoint": str(out / "checkpoint.npz"), "steps": st.step,
                      "seconds": round(time.time() - t0, 1), **last}))
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    from .predictor import load_checkpoint, read_header

    header = read_header(args.ckpt)
    mcd = header["model_config"]
    win = _window_params(args, cfg)
    win.update({"H": mcd["H"], "F": mcd["F"]})
    st = load_checkpoint(args.ckpt, args.features)
    test_paths = _data_paths(args, cfg, "test")
    if not test_paths:
        raise UsageError("eval needs --test")
    windows = load_windows(test_paths, win["H"], win["F"], win["stride"])
    rep = metrics.evaluate(st.model, windows, joint_nll_flag=args.joint_nll)
    text = json.dumps(rep.to_dict(), indent=1)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def _run_cell(job: dict) -> dict:
    """Train + evaluate one ablation cell; never raises."""
    cell = Path(job["cell_dir"])
    try:
        shared = job.get("windows")
        st = train_cell(job["train"], job["val"], job["features"], job["seed"], job["window"],
                        job["model"], job["optim"], cell,
                        windows=(shared[0], shared[1]) if shared else None)
        test_w = shared[2] if shared else load_windows(job["test"], job["window"]["H"],
                                                       job["window"]["F"], job["window"]["stride"])
        rep = metrics.evaluate(st.model, test_w)
        (cell / "report.json").write_text(json.dumps(rep.to_dict(), indent=1) + "\n")
        return {"ok": True, "report": rep.to_dict(), "cell": str(cell)}
    except Exception as exc:  # reported in the partial table
        log.exception("cell %s failed", cell)
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}", "cell": str(cell)}


def run_ablation(train_paths, val_paths, test_paths, features: Sequence[str], seeds: Sequence[int],
                 win: dict, model_sec: dict, optim_sec: dict, out_dir, jobs: int = 1):
    """Train and evaluate every (config, seed) cell; returns (summary, results)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = dict(train=list(train_paths), val=list(val_paths), test=list(test_paths), window=win,
                model=model_sec, optim=optim_sec)
    cells = [dict(base, features=f, seed=int(s), cell_dir=str(out / f"{f}-seed{s}"))
             for f in features for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_cell, cells))
    else:
        shared = (load_windows(train_paths, win["H"], win["F"], win["stride"]),
                  load_windows(val_paths, win["H"], win["F"], win["stride"]),
                  load_windows(test_paths, win["H"], win["F"], win["stride"]))
        results = []
        for c in cells:
            log.info("cell %s", c["cell_dir"])
            results.append(_run_cell(dict(c, windows=shared)))
    reports = [metrics.EvalReport(**r["report"]) for r in results if r["ok"]]
    summary = metrics.summarize(reports)
    ordered = {f: summary[f] for f in features if f in summary}
    write_ablation_report(out, ordered, results)
    return ordered, results


def write_ablation_report(out: Path, summary: dict, results: list) -> None:
    failures = [r for r in results if not r["ok"]]
    payload = {"summary": summary, "cells": results, "failed": len(failures)}
    (out / "ablation.json").write_text(json.dumps(payload, indent=1) + "\n")
    (out / "ablation.txt").write_text(metrics.format_table(summary, "mean ± std over seeds") + "\n")


def cmd_ablate(args, cfg) -> int:
    sec = _section(cfg, "ablate")
    features = _pick(args.features_list, sec.get("features"), None)
    if not features:
        raise UsageError("ablate needs --features (comma separated) or ablate.features")
    if isinstance(features, str):
        features = features.split(",")
    features = [FeatureConfig.parse(f).value for f in features]
    seeds = _pick(args.seeds, sec.get("seeds"), None)
    if args.seed is not None and seeds is None:
        seeds = [args.seed]
    if not seeds:
        raise UsageError("ablate needs --seeds")
    paths = {k: _data_paths(args, cfg, k) for k in ("train", "val", "test")}
    if not paths["train"] or not paths["test"]:
        raise UsageError("ablate needs --train and --test")
    for p in [*paths["train"], *paths["val"], *paths["test"]]:
        if not Path(p).exists():
            raise FileNotFoundError(p)
    win = _window_params(args, cfg)
    mc = _model_config(args, cfg, features[0], int(seeds[0]), win).to_dict()
    oc = _optim_config(args, cfg, 0).to_dict()
    oc.pop("shuffle_seed", None)
    model_sec = {k: v for k, v in mc.items() if k not in ("feature_config", "seed", "H", "F")}
    out = Path(args.out)
    dump_resolved(out, {"command": "ablate", "features": features, "seeds": [int(s) for s in seeds],
                        "window": win, "model": model_sec, "optim": oc, "data": paths})
    jobs = int(_pick(args.jobs, sec.get("jobs"), 1))
    summary, results = run_ablation(paths["train"], paths["val"], paths["test"], features, seeds,
                                    win, model_sec, oc, out, jobs)
    print(metrics.format_table(summary, "mean ± std over seeds"))
    failed = [r for r in results if not r["ok"]]
    if failed:
        for r in failed:
            print(f"FAILED {r['cell']}: {r['error']}", file=sys.stderr)
        return EXIT_NUMERIC if all("FloatingPoint" in r["error"] or "Diverged" in r["error"]
                                   for r in failed) else EXIT_DATA
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    root = Path(args.input)
    reports = []
    for p in sorted(root.glob("*/report.json")):
        reports.append(metrics.EvalReport(**json.loads(p.read_text())))
    if not reports:
        raise FileNotFoundError(f"no */report.json under {root}")
    summary = metrics.summarize(reports)
    print(metrics.format_table(summary, "mean ± std over seeds"))
    if args.json:
        print(metrics.summary_json(summary))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    glob = _Parser(add_help=False)
    glob.add_argument("--config", help="YAML config file with nested defaults")
    glob.add_argument("--seed", type=int)
    glob.add_argument("--force", action="store_true", help="overwrite existing outputs")
    glob.add_argument("--jobs", type=int, help="parallel ablation cells")
    glob.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="skelcast", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[glob], help="generate a synthetic crowd dataset")
    s.add_argument("--scenes", type=int)
    s.add_argument("--ratios", type=float, nargs=3)
    s.add_argument("--out", required=True)

    s = sub.add_parser("project", parents=[glob], help="positions from 2D ankle keypoints")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--camera-height", type=float, help="override camera_height_m (meters)")
    s.add_argument("--yaw-offset", type=float, default=0.0, help="radians")
    s.add_argument("--anchor-height", type=float, default=0.05,
                   help="height of the ankle keypoint above the floor (meters)")

    def window_flags(sp):
        sp.add_argument("--H", type=int, help="past frames")
        sp.add_argument("--F", type=int, help="future frames")
        sp.add_argument("--stride", type=int, help="window stride (default H)")

    def train_flags(sp):
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--weight-decay", type=float)
        sp.add_argument("--max-steps", type=int)
        sp.add_argument("--embed-dim", type=int)
        sp.add_argument("--num-layers", type=int)

    s = sub.add_parser("train", parents=[glob], help="train one forecaster")
    s.add_argument("--train", nargs="+")
    s.add_argument("--val", nargs="+")
    s.add_argument("--features", help="feature config, e.g. NONE, KL3D, K2D")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--out", required=True)
    window_flags(s)
    train_flags(s)

    s = sub.add_parser("eval", parents=[glob], help="evaluate a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--test", nargs="+")
    s.add_argument("--features", help="refuse unless the checkpoint matches")
    s.add_argument("--joint-nll", action="store_true", help="trajectory-level NLL variant")
    s.add_argument("--out")
    window_flags(s)

    s = sub.add_parser("ablate", parents=[glob], help="train+evaluate configs x seeds")
    s.add_argument("--train", nargs="+")
    s.add_argument("--val", nargs="+")
    s.add_argument("--test", nargs="+")
    s.add_argument("--features", dest="features_list", help="comma separated feature configs")
    s.add_argument("--seeds", type=int, nargs="+")
    s.add_argument("--out", required=True)
    window_flags(s)
    train_flags(s)

    s = sub.add_parser("report", parents=[glob], help="tabulate an ablation directory")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--json", action="store_true")
    return p


COMMANDS = {"synth": cmd_synth, "project": cmd_project, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "report": cmd_report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"skelcast {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileExistsError as exc:
        print(f"skelcast {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"skelcast {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as exc:
        print(f"skelcast {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
