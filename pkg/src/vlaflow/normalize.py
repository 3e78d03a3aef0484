"""Per-dimension standardization of actions and robot states."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STD_FLOOR = 1e-6


@dataclass
class NormStats:
    action_mean: np.ndarray
    action_std: np.ndarray
    state_mean: np.ndarray
    state_std: np.ndarray

    @classmethod
    def identity(cls, d_action: int, d_state: int) -> "NormStats":
        return cls(np.zeros(d_action), np.ones(d_action), np.zeros(d_state), np.ones(d_state))

    def normalize_actions(self, a):
        return (a - self.action_mean) / self.action_std

    def denormalize_actions(self, a):
        return a * self.action_std + self.action_mean

    def normalize_states(self, s):
        return (s - self.state_mean) / self.state_std

    def denormalize_states(self, s):
        return s * self.state_std + self.state_mean

    def to_dict(self) -> dict:
        return {k: np.asarray(v, dtype=np.float64).tolist() for k, v in vars(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in d.items()})


def _stats(x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    return x.mean(axis=0), np.maximum(x.std(axis=0), STD_FLOOR)


def compute_norm_stats(dataset) -> NormStats:
    """Statistics over every demonstrated action (once per step) and state."""
    if len(dataset) == 0:
        raise ValueError("cannot compute normalization statistics of an empty dataset")
    am, asd = _stats(dataset.actions[:, 0])
    sm, ssd = _stats(dataset.states)
    return NormStats(am, asd, sm, ssd)
