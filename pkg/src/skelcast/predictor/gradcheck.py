"""Central finite-difference check of autograd gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch


def gradient_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    n_samples: int = 200,
    eps: float = 1e-4,
    seed: int = 0,
    atol: float = 1e-8,
) -> float:
    """Max relative error between analytic and numerical partial derivatives.

    ``n_samples`` scalar entries are drawn uniformly (without replacement
    when possible) across ``params``. For each, the derivative is
    estimated as ``(L(p + eps) - L(p - eps)) / (2 eps)`` and compared with
    autograd via ``|a - n| / max(|a|, |n|, atol)``. Run in float64.
    Smaller ``eps`` lets round-off in the loss swamp near-zero partials;
    1e-4 keeps both round-off and the O(eps^2) truncation well below 1e-4.

    An empty parameter list passes vacuously with error 0.
    """
    params = [p for p in params if p.numel() > 0]
    if not params:
        return 0.0
    for p in params:
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)

    sizes = np.array([p.numel() for p in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=min(n_samples, total), replace=False)
    if n_samples > total:
        flat = np.concatenate([flat, rng.integers(0, total, n_samples - total)])
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    with torch.no_grad():
        for f in flat:
            k = int(np.searchsorted(offsets, f, side="right") - 1)
            j = int(f - offsets[k])
            p = params[k].view(-1)
            orig = p[j].item()
            p[j] = orig + eps
            lp = float(loss_fn())
            p[j] = orig - eps
            lm = float(loss_fn())
            p[j] = orig
            num = (lp - lm) / (2 * eps)
            ana = float(grads[k].reshape(-1)[j])
            err = abs(ana - num) / max(abs(ana), abs(num), atol)
            worst = max(worst, err)
    return worst
