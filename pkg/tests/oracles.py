"""Direct-definition reference metrics, written with plain loops.

These deliberately avoid the vectorized paths of ``skelcast.metrics`` so
agreement between the two is meaningful.
"""

import math

import numpy as np


def _dist(p, q):
    return math.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2)


def _scored(mask):
    return [i for i in range(len(mask)) if any(mask[i])]


def ade_table(means, gt, mask):
    M = len(means)
    out = {}
    for i in _scored(mask):
        steps = [t for t in range(len(mask[i])) if mask[i][t]]
        out[i] = [sum(_dist(means[m][i][t], gt[i][t]) for t in steps) / len(steps) for m in range(M)]
    return out


def min_ade(means, gt, mask):
    tab = ade_table(means, gt, mask)
    return sum(min(v) for v in tab.values()) / len(tab)


def min_fde(means, gt, mask):
    vals = []
    for i in _scored(mask):
        t = max(t for t in range(len(mask[i])) if mask[i][t])
        vals.append(min(_dist(means[m][i][t], gt[i][t]) for m in range(len(means))))
    return sum(vals) / len(vals)


def ml_ade(means, probs, gt, mask):
    best = 0
    for m in range(1, len(probs)):
        if probs[m] > probs[best]:
            best = m
    tab = ade_table(means, gt, mask)
    return sum(v[best] for v in tab.values()) / len(tab)


def gaussian_pdf(x, mu, cov):
    cov = np.asarray(cov, dtype=float)
    d = np.asarray(x, dtype=float) - np.asarray(mu, dtype=float)
    inv = np.linalg.inv(cov)
    return math.exp(-0.5 * float(d @ inv @ d)) / (2 * math.pi * math.sqrt(np.linalg.det(cov)))


def nll_pos(means, covs, probs, gt, mask):
    """Dense mixture density per valid agent-step, no log-sum-exp."""
    vals = []
    for i in range(len(mask)):
        for t in range(len(mask[i])):
            if not mask[i][t]:
                continue
            dens = sum(probs[m] * gaussian_pdf(gt[i][t], means[m][i][t], covs[m][i][t]) for m in range(len(probs)))
            vals.append(-math.log(dens))
    return sum(vals) / len(vals)


def random_instance(rng, well_conditioned=True):
    """Small random prediction problem (N<=3, M<=6, F<=12)."""
    N = int(rng.integers(1, 4))
    M = int(rng.integers(1, 7))
    F = int(rng.integers(1, 13))
    gt = rng.normal(scale=2.0, size=(N, F, 2))
    means = gt[None] + rng.normal(scale=0.8, size=(M, N, F, 2))
    A = rng.normal(scale=0.5, size=(M, N, F, 2, 2))
    covs = A @ np.swapaxes(A, -1, -2) + (0.3 if well_conditioned else 1e-3) * np.eye(2)
    probs = rng.dirichlet(np.ones(M) * (3.0 if well_conditioned else 0.3))
    mask = rng.random((N, F)) > 0.3
    mask[0, int(rng.integers(F))] = True
    return means, covs, probs, gt, mask
