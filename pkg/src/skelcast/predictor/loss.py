"""Training objectives over scene-consistent Gaussian modes."""

from __future__ import annotations

import math

import torch

LOG_2PI = math.log(2.0 * math.pi)


def gaussian_nll(diff, cov):
    """Negative log density of a 2D Gaussian at offset ``diff`` (..., 2)."""
    a, b, c = cov[..., 0, 0], cov[..., 1, 1], cov[..., 0, 1]
    det = a * b - c * c
    dx, dy = diff[..., 0], diff[..., 1]
    maha = (b * dx * dx - 2.0 * c * dx * dy + a * dy * dy) / det
    return LOG_2PI + 0.5 * torch.log(det) + 0.5 * maha


def best_mode(means, target, valid):
    """Scene-level winner mode: argmin over modes of the masked ADE.

    means (B, M, N, F, 2), target (B, N, F, 2), valid (B, N, F) ->
    (B,) long. Ties go to the lowest mode index.
    """
    err = torch.linalg.vector_norm(means - target[:, None], dim=-1)  # (B, M, N, F)
    w = valid[:, None].to(err.dtype)
    ade = (err * w).sum(dim=(2, 3)) / w.sum(dim=(2, 3)).clamp(min=1.0)
    return torch.argmin(ade, dim=1)


def forecast_loss(means, covs, logits, target, valid, cue_weight: float = 1.0, kind: str = "wta"):
    """Scalar training loss.

    ``kind="wta"``: Gaussian NLL of the winning mode averaged over valid
    agent-steps, plus ``cue_weight`` times the cross-entropy of the mode
    logits against the winner (mean over scenes with targets).
    ``kind="mixture"``: per-step mixture NLL averaged over valid agent-steps.

    Returns (loss, parts) where parts holds detached float components.
    """
    valid = valid.bool()
    n_valid = valid.sum()
    if n_valid == 0:
        raise ValueError("loss needs at least one valid target step")
    logp = torch.log_softmax(logits, dim=-1)  # (B, M)
    nll = gaussian_nll(means - target[:, None], covs)  # (B, M, N, F)
    w = valid.to(nll.dtype)
    if kind == "wta":
        m = best_mode(means.detach(), target, valid)
        idx = m[:, None, None, None].expand(-1, 1, *nll.shape[2:])
        nll_w = torch.gather(nll, 1, idx).squeeze(1)
        pos = (nll_w * w).sum() / n_valid
        scored = valid.flatten(1).any(dim=1)
        ce = -(logp.gather(1, m[:, None]).squeeze(1))[scored].mean()
        total = pos + cue_weight * ce
        return total, {"nll": float(pos.detach()), "ce": float(ce.detach())}
    if kind == "mixture":
        mix = -torch.logsumexp(logp[:, :, None, None] - nll, dim=1)  # (B, N, F)
        total = (mix * w).sum() / n_valid
        return total, {"nll": float(total.detach()), "ce": 0.0}
    raise ValueError(f"unknown loss kind {kind!r}")
