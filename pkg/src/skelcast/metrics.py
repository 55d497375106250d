"""Displacement and likelihood metrics for multimodal forecasts.

All single-window metric functions take a :class:`PredictionSet`, ground
truth ``gt`` (N, F, 2) and a validity ``mask`` (N, F). Agents without a
valid step are skipped; each scored agent counts once (NLL counts each
valid agent-step once).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import SceneWindow
from .prediction import PredictionSet

LOG_2PI = math.log(2.0 * math.pi)
METRIC_NAMES = ("MinADE", "MinFDE", "MLADE", "NLL_pos")


class NoScoredAgents(ValueError):
    pass


def _prep(pred: PredictionSet, gt, mask):
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if gt.shape != pred.means.shape[1:] or mask.shape != gt.shape[:2]:
        raise ValueError(f"gt {gt.shape} / mask {mask.shape} do not match prediction {pred.means.shape}")
    scored = mask.any(axis=1)
    if not scored.any():
        raise NoScoredAgents("no agent has a valid ground-truth step")
    return gt, mask, scored


def _errors(pred: PredictionSet, gt):
    return np.linalg.norm(pred.means - gt[None], axis=-1)  # (M, N, F)


def agent_ade(pred: PredictionSet, gt, mask) -> np.ndarray:
    """(M, N_scored) mean displacement per mode for every scored agent."""
    gt, mask, scored = _prep(pred, gt, mask)
    err = _errors(pred, gt)
    ade = (err * mask).sum(axis=-1) / np.maximum(mask.sum(axis=-1), 1)
    return ade[:, scored]


def last_valid_index(mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    F = mask.shape[-1]
    return F - 1 - np.argmax(mask[..., ::-1], axis=-1)


def agent_fde(pred: PredictionSet, gt, mask) -> np.ndarray:
    """(M, N_scored) displacement at each scored agent's last valid step."""
    gt, mask, scored = _prep(pred, gt, mask)
    err = _errors(pred, gt)
    last = last_valid_index(mask)
    fde = np.take_along_axis(err, last[None, :, None], axis=2)[..., 0]
    return fde[:, scored]


def most_likely_mode(pred: PredictionSet) -> int:
    return int(np.argmax(pred.mode_probs))  # first maximum wins ties


def min_ade(pred, gt, mask) -> float:
    return float(agent_ade(pred, gt, mask).min(axis=0).mean())


def min_fde(pred, gt, mask) -> float:
    return float(agent_fde(pred, gt, mask).min(axis=0).mean())


def ml_ade(pred, gt, mask) -> float:
    return float(agent_ade(pred, gt, mask)[most_likely_mode(pred)].mean())


def _log_density(pred: PredictionSet, gt) -> np.ndarray:
    """(M, N, F) Gaussian log densities of gt under each mode."""
    cov = pred.covs
    a, b, c = cov[..., 0, 0], cov[..., 1, 1], cov[..., 0, 1]
    det = a * b - c * c
    if not (np.all(a > 0) and np.all(det > 0) and np.allclose(cov[..., 0, 1], cov[..., 1, 0])):
        raise ValueError("covariance is not symmetric positive definite")
    d = gt[None] - pred.means
    dx, dy = d[..., 0], d[..., 1]
    maha = (b * dx * dx - 2.0 * c * dx * dy + a * dy * dy) / det
    return -LOG_2PI - 0.5 * np.log(det) - 0.5 * maha


def _logsumexp(x, axis=0):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m, axis) + np.log(np.sum(np.exp(x - m), axis=axis))


def step_nll(pred: PredictionSet, gt, mask) -> np.ndarray:
    """Mixture NLL of every valid agent-step, flattened."""
    gt, mask, _ = _prep(pred, gt, mask)
    with np.errstate(divide="ignore"):
        logp = np.log(pred.mode_probs)
    ll = _logsumexp(logp[:, None, None] + _log_density(pred, gt), axis=0)  # (N, F)
    return -ll[mask]


def joint_nll(pred: PredictionSet, gt, mask) -> np.ndarray:
    """Per scored agent: trajectory-level mixture NLL divided by its valid step count."""
    gt, mask, scored = _prep(pred, gt, mask)
    with np.errstate(divide="ignore"):
        logp = np.log(pred.mode_probs)
    ld = (_log_density(pred, gt) * mask[None]).sum(axis=-1)  # (M, N)
    ll = _logsumexp(logp[:, None] + ld, axis=0)
    return (-ll / np.maximum(mask.sum(axis=-1), 1))[scored]


def nll_pos(pred, gt, mask, joint: bool = False) -> float:
    vals = joint_nll(pred, gt, mask) if joint else step_nll(pred, gt, mask)
    return float(vals.mean())


# --------------------------------------------------------------------------
# dataset-level evaluation


@dataclass
class EvalReport:
    config: str
    MinADE: float
    MinFDE: float
    MLADE: float
    NLL_pos: float
    n_agents: int
    n_windows: int

    def to_dict(self) -> dict:
        return asdict(self)

    def metrics(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_NAMES}


def parity_mask(window: SceneWindow) -> np.ndarray:
    """Agents eligible for scoring under every feature configuration.

    An agent needs a valid past position, at least one valid past keypoint
    (2D or 3D) and at least one valid future step.
    """
    return window.past_valid.any(axis=1) & window.has_keypoints() & window.future_valid.any(axis=1)


def score(preds: Sequence[PredictionSet], windows: Sequence[SceneWindow], config: str = "",
          joint_nll_flag: bool = False) -> EvalReport:
    """Aggregate the four metrics over windows after the parity filter."""
    order = sorted(range(len(windows)), key=lambda i: (windows[i].scene_id, windows[i].start))
    ade_min, fde_min, ade_ml, nll_vals = [], [], [], []
    n_windows = 0
    for i in order:
        w, p = windows[i], preds[i]
        keep = np.flatnonzero(parity_mask(w))
        if keep.size == 0:
            continue
        n_windows += 1
        ps = p.subset(keep)
        gt = w.future_pos[keep]
        m = w.future_valid[keep]
        gt = np.where(m[..., None], gt, 0.0)
        ade = agent_ade(ps, gt, m)
        ade_min.append(ade.min(axis=0))
        ade_ml.append(ade[most_likely_mode(ps)])
        fde_min.append(agent_fde(ps, gt, m).min(axis=0))
        nll_vals.append(joint_nll(ps, gt, m) if joint_nll_flag else step_nll(ps, gt, m))
    if not ade_min:
        raise NoScoredAgents(
            "no agent passed the parity filter (needs past position, past keypoints and a future step)"
        )
    cat = np.concatenate
    rep = EvalReport(
        config, float(cat(ade_min).mean()), float(cat(fde_min).mean()), float(cat(ade_ml).mean()),
        float(cat(nll_vals).mean()), int(sum(len(a) for a in ade_min)), n_windows,
    )
    if not all(math.isfinite(v) for v in rep.metrics().values()):
        raise FloatingPointError(f"non-finite metric in report {rep}")
    return rep


def evaluate(model, windows: Sequence[SceneWindow], config=None, joint_nll_flag: bool = False) -> EvalReport:
    """Run ``model`` over ``windows`` and score it."""
    from .predictor import predict

    name = model.config.feature_config
    if config is not None and str(getattr(config, "value", config)).upper() != name:
        raise ValueError(f"model was trained with {name}, evaluation requested {config}")
    preds = predict(model, windows)
    return score(preds, windows, name, joint_nll_flag)


# --------------------------------------------------------------------------
# report tables


def summarize(reports: Iterable[EvalReport]) -> dict:
    """Group reports by config; mean and population std of each metric over seeds."""
    groups: dict[str, list[EvalReport]] = {}
    for r in reports:
        groups.setdefault(r.config, []).append(r)
    out = {}
    for cfg, rs in groups.items():
        row = {"n_runs": len(rs)}
        for k in METRIC_NAMES:
            v = np.array([getattr(r, k) for r in rs])
            row[k] = {"mean": float(v.mean()), "std": float(v.std())}
        out[cfg] = row
    return out


def format_table(summary: dict, title: str = "") -> str:
    """Fixed-width text table, one row per feature configuration."""
    head = f"{'G(s)':<12}" + "".join(f"{k:>18}" for k in METRIC_NAMES)
    lines = [title] if title else []
    lines += [head, "-" * len(head)]
    for cfg, row in summary.items():
        cells = "".join(f"{row[k]['mean']:>10.4f} ± {row[k]['std']:<5.3f}" for k in METRIC_NAMES)
        lines.append(f"{cfg:<12}{cells}")
    return "\n".join(lines)


def summary_json(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=False)
