from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COV_FLOOR = 1e-4  # m^2, smallest covariance eigenvalue the forecaster can emit


@dataclass
class PredictionSet:
    """Multimodal forecast for the agents of one window.

    Modes are scene-consistent: mode ``m`` of every agent belongs to the
    same joint hypothesis and shares ``mode_probs[m]``.
    """

    means: np.ndarray  # (M, N, F, 2)
    covs: np.ndarray  # (M, N, F, 2, 2)
    mode_probs: np.ndarray  # (M,)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covs = np.asarray(self.covs, dtype=np.float64)
        self.mode_probs = np.asarray(self.mode_probs, dtype=np.float64)
        M = self.means.shape[0]
        if self.means.ndim != 4 or self.means.shape[-1] != 2:
            raise ValueError(f"means must be (M, N, F, 2), got {self.means.shape}")
        if self.covs.shape != self.means.shape + (2,):
            raise ValueError(f"covs shape {self.covs.shape} does not match means {self.means.shape}")
        if self.mode_probs.shape != (M,):
            raise ValueError(f"mode_probs must have shape ({M},)")

    @property
    def num_modes(self) -> int:
        return self.means.shape[0]

    @property
    def n_agents(self) -> int:
        return self.means.shape[1]

    @property
    def horizon(self) -> int:
        return self.means.shape[2]

    def subset(self, idx) -> "PredictionSet":
        return PredictionSet(self.means[:, idx], self.covs[:, idx], self.mode_probs)
