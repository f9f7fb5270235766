"""Count-based estimates from observed transitions."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..mdp import Dataset


class CoverageWarning(UserWarning):
    """Some (state, action) pair was never observed."""


@dataclass(frozen=True, eq=False)
class EstimatedTransitions:
    t_hat: np.ndarray           # [k, i, j]
    pair_counts: np.ndarray     # [i, k]
    triple_counts: np.ndarray   # [i, k, j]

    @property
    def unvisited(self) -> np.ndarray:
        return self.pair_counts == 0

    def max_deviation(self, transitions: np.ndarray, visited_only: bool = False) -> float:
        dev = np.abs(self.t_hat - transitions)            # [k, i, j]
        if visited_only:
            dev = dev * (~self.unvisited).T[:, :, None]
        return float(dev.max())


def mle_transition(dataset: Dataset, n_states: int, n_actions: int, warn: bool = True) -> EstimatedTransitions:
    """Empirical transition frequencies; unvisited rows are filled uniformly and flagged."""
    idx = (dataset.x * n_actions + dataset.a) * n_states + dataset.x_next
    triples = np.bincount(idx, minlength=n_states * n_actions * n_states).reshape(n_states, n_actions, n_states)
    pairs = triples.sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        t_hat = np.where(pairs[:, :, None] > 0, triples / pairs[:, :, None], 1.0 / n_states)
    if warn and np.any(pairs == 0):
        missing = [(int(i), int(k)) for i, k in zip(*np.nonzero(pairs == 0))]
        warnings.warn(f"unvisited (state, action) pairs filled uniformly: {missing}", CoverageWarning, stacklevel=2)
    return EstimatedTransitions(t_hat=np.transpose(t_hat, (1, 0, 2)), pair_counts=pairs, triple_counts=triples)
