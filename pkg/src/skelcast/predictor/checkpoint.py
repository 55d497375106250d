"""Checkpoint container.

An ``.npz`` archive holding a JSON header (format version, model and
optimizer configs, feature manifest, training history) under
``__header__`` and float32 row-major arrays under ``param/<name>``.
AdamW moments are stored under ``optim/<index>/<key>`` when requested.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch

from ..skelfeat import FeatureConfig, FeatureManifest, feature_manifest
from .model import Forecaster, ModelConfig, build_model
from .train import OptimConfig, TrainState, make_optimizer

FORMAT = "skelcast-checkpoint"
VERSION = 1


class ManifestMismatch(ValueError):
    pass


def save_checkpoint(path: Union[str, Path], state: TrainState, oc: Optional[OptimConfig] = None,
                    with_optimizer: bool = True) -> Path:
    path = Path(path)
    model = state.model
    header = {
        "format": FORMAT,
        "version": VERSION,
        "model_config": model.config.to_dict(),
        "optim_config": oc.to_dict() if oc else None,
        "manifest": model.config.manifest.to_dict(),
        "step": state.step,
        "epoch": state.epoch,
        "history": state.history,
    }
    arrays = {"__header__": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for name, t in model.state_dict().items():
        arrays[f"param/{name}"] = t.detach().cpu().numpy().astype(np.float32)
    if with_optimizer:
        for idx, st in state.optimizer.state_dict()["state"].items():
            for key, val in st.items():
                arrays[f"optim/{idx}/{key}"] = torch.as_tensor(val).cpu().numpy().astype(np.float32)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def read_header(path) -> dict:
    with np.load(path) as z:
        header = json.loads(z["__header__"].tobytes().decode())
    if header.get("format") != FORMAT:
        raise ValueError(f"{path} is not a {FORMAT} file")
    if header.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    return header


def load_checkpoint(path, feature_config=None, oc: Optional[OptimConfig] = None) -> TrainState:
    """Load a checkpoint; refuses when its manifest differs from ``feature_config``."""
    header = read_header(path)
    mc = ModelConfig.from_dict(header["model_config"])
    stored = FeatureManifest.from_dict(header["manifest"])
    if stored != mc.manifest:
        raise ManifestMismatch(f"{path}: stored feature manifest disagrees with its model config")
    if feature_config is not None:
        want = feature_manifest(FeatureConfig.parse(feature_config))
        if want != stored:
            raise ManifestMismatch(
                f"{path} was trained with features {stored.config} "
                f"(dim {stored.dim}); requested {want.config} (dim {want.dim})"
            )
    model: Forecaster = build_model(mc)
    with np.load(path) as z:
        sd = {k[len("param/"):]: torch.from_numpy(z[k].copy()) for k in z.files if k.startswith("param/")}
        optim = {}
        for k in z.files:
            if k.startswith("optim/"):
                _, idx, key = k.split("/", 2)
                optim.setdefault(int(idx), {})[key] = torch.from_numpy(z[k].copy())
    model.load_state_dict(sd)
    if oc is None and header.get("optim_config"):
        oc = OptimConfig.from_dict(header["optim_config"])
    opt = make_optimizer(model, oc or OptimConfig())
    if optim:
        osd = opt.state_dict()
        for idx, st in optim.items():
            if "step" in st:
                st["step"] = st["step"].reshape(())
        osd["state"] = optim
        opt.load_state_dict(osd)
    model.eval()
    return TrainState(model, opt, header.get("history") or {"steps": [], "epochs": []},
                      int(header.get("step", 0)), int(header.get("epoch", 0)))
