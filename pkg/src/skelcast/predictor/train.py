from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .loss import forecast_loss
from .model import Forecaster, ModelConfig, WindowTensors, build_model, collate

log = logging.getLogger(__name__)


@dataclass
class OptimConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 64
    epochs: int = 20
    max_steps: Optional[int] = None
    grad_clip: Optional[float] = 1.0
    loss: str = "wta"  # or "mixture"
    cue_weight: float = 1.0  # weight of the mode cross-entropy term
    shuffle_seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OptimConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


class TrainingDiverged(FloatingPointError):
    """Raised on a non-finite loss; carries the last finite model state."""

    def __init__(self, msg, state_dict, history):
        super().__init__(msg)
        self.state_dict = state_dict
        self.history = history


@dataclass
class TrainState:
    model: Forecaster
    optimizer: torch.optim.Optimizer
    history: dict
    step: int = 0
    epoch: int = 0


def make_optimizer(model: Forecaster, oc: OptimConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(model.parameters(), lr=oc.lr, betas=(oc.beta1, oc.beta2),
                             weight_decay=oc.weight_decay)


def new_state(mc: ModelConfig, oc: OptimConfig, dtype=torch.float32) -> TrainState:
    torch.manual_seed(mc.seed)
    model = build_model(mc, dtype)
    return TrainState(model, make_optimizer(model, oc), {"steps": [], "epochs": []})


@torch.no_grad()
def evaluate_loss(model: Forecaster, items: Sequence[WindowTensors], oc: OptimConfig) -> float:
    """Loss averaged over batches, weighted by valid target steps."""
    model.eval()
    dtype = next(model.parameters()).dtype
    tot, n = 0.0, 0
    for s in range(0, len(items), oc.batch_size):
        batch = collate(items[s : s + oc.batch_size], dtype)
        k = int(batch.target_valid.sum())
        if k == 0:
            continue
        loss, _ = forecast_loss(*model(batch), batch.target, batch.target_valid, oc.cue_weight, oc.loss)
        tot += float(loss) * k
        n += k
    return tot / max(n, 1)


def train(
    train_items: Sequence[WindowTensors],
    mc: ModelConfig,
    oc: OptimConfig,
    val_items: Sequence[WindowTensors] = (),
    state: Optional[TrainState] = None,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> TrainState:
    """Fit the forecaster with AdamW.

    Batch order comes from ``oc.shuffle_seed`` and the epoch number, so two
    runs with equal configs and data give identical loss curves. Passing a
    ``state`` resumes it; its step counter and history keep growing.
    """
    items = [it for it in train_items if it.target_valid.any()]
    if not items:
        raise ValueError("no training windows with valid targets")
    if items[0].feats.shape[-1] != mc.manifest.dim:
        raise ValueError(f"training features have dim {items[0].feats.shape[-1]}, "
                         f"config {mc.feature_config} expects {mc.manifest.dim}")
    st = state or new_state(mc, oc)
    model, opt = st.model, st.optimizer
    dtype = next(model.parameters()).dtype
    last_good = copy.deepcopy(model.state_dict())
    n = len(items)
    for _ in range(oc.epochs):
        if oc.max_steps is not None and st.step >= oc.max_steps:
            break
        rng = np.random.default_rng([oc.shuffle_seed, st.epoch])
        order = rng.permutation(n)
        model.train()
        ep_loss, ep_w = 0.0, 0
        for s in range(0, n, oc.batch_size):
            if oc.max_steps is not None and st.step >= oc.max_steps:
                break
            batch = collate([items[i] for i in order[s : s + oc.batch_size]], dtype)
            loss, parts = forecast_loss(*model(batch), batch.target, batch.target_valid,
                                        oc.cue_weight, oc.loss)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at step {st.step}", last_good, st.history)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if oc.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), oc.grad_clip)
            opt.step()
            lv = float(loss.detach())
            st.history["steps"].append({"step": st.step, "loss": lv, **parts})
            st.step += 1
            k = batch.past_pos.shape[0]
            ep_loss += lv * k
            ep_w += k
            last_good = {k2: v.detach().clone() for k2, v in model.state_dict().items()}
        rec = {"epoch": st.epoch, "step": st.step, "train_loss": ep_loss / max(ep_w, 1)}
        if val_items:
            rec["val_loss"] = evaluate_loss(model, val_items, oc)
        st.history["epochs"].append(rec)
        log.info("epoch %d step %d train %.4f val %s", st.epoch, st.step, rec["train_loss"],
                 f"{rec['val_loss']:.4f}" if "val_loss" in rec else "-")
        if on_epoch:
            on_epoch(rec)
        st.epoch += 1
    model.eval()
    return st


def overfit_batch(items: Sequence[WindowTensors], mc: ModelConfig, steps: int = 500, lr: float = 1e-3) -> list[float]:
    """Repeatedly step on one fixed batch; returns the loss after each step's forward."""
    oc = OptimConfig(lr=lr, batch_size=len(items), epochs=1)
    st = new_state(mc, oc)
    batch = collate(list(items))
    losses = []
    st.model.train()
    for _ in range(steps):
        loss, _ = forecast_loss(*st.model(batch), batch.target, batch.target_valid)
        losses.append(float(loss.detach()))
        st.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        st.optimizer.step()
    return losses
