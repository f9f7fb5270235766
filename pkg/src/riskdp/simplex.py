"""Derivative-free minimisation over the probability simplex.

Candidates are a regular lattice, flat-Dirichlet samples and a few rounds of
local refinement around the incumbent. Ties are broken towards the
lexicographically smallest weight vector, which makes the result independent
of evaluation order.
"""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import ValidationError
from .mdp import make_rng


@dataclass(frozen=True)
class SimplexSearch:
    grid_step: float = 0.05
    n_random: int = 2000
    refine_rounds: int = 3
    refine_radius: float = 0.05
    refine_shrink: float = 0.25
    refine_samples: int = 200
    seed: int = 0
    vertex_only: bool = False

    def __post_init__(self):
        if not (0.0 < self.grid_step <= 1.0):
            raise ValidationError(f"grid_step must lie in (0, 1], got {self.grid_step}")
        if min(self.n_random, self.refine_rounds, self.refine_samples) < 0 or self.refine_radius < 0:
            raise ValidationError("search counts and radius must be non-negative")

    @classmethod
    def vertices(cls) -> "SimplexSearch":
        """Deterministic policies only; exact, no random candidates."""
        return cls(vertex_only=True, n_random=0, refine_rounds=0)

    def to_dict(self) -> dict:
        return asdict(self)

    def base_candidates(self, n_actions: int) -> np.ndarray:
        return _base_candidates(self, n_actions)

    def minimize(self, objective: Callable[[np.ndarray], np.ndarray], n_actions: int,
                 stream: int = 0) -> tuple[float, np.ndarray, float]:
        """Return ``(best value, best weights, base value)``.

        ``base value`` is the minimum over the fixed (lattice + Dirichlet)
        candidate set alone; its gap to ``best value`` is the refinement gain.
        """
        cands = self.base_candidates(n_actions)
        vals = np.asarray(objective(cands), dtype=float)
        idx = int(np.argmin(vals))
        best_val, best = float(vals[idx]), cands[idx]
        base_val = best_val
        if n_actions == 1 or self.vertex_only:
            return best_val, best.copy(), base_val
        rng = make_rng(self.seed, 1, stream)
        radius = self.refine_radius
        for _ in range(self.refine_rounds):
            local = project_simplex(best + rng.uniform(-radius, radius, size=(self.refine_samples, n_actions)))
            local = local[np.lexsort(local.T[::-1])]
            lv = np.asarray(objective(local), dtype=float)
            j = int(np.argmin(lv))
            if lv[j] < best_val or (lv[j] == best_val and tuple(local[j]) < tuple(best)):
                best_val, best = float(lv[j]), local[j]
            radius *= self.refine_shrink
        return best_val, best.copy(), base_val


def lattice(n_actions: int, divisions: int) -> np.ndarray:
    """All points of the simplex with coordinates in multiples of ``1/divisions``."""
    rows = []
    for bars in itertools.combinations(range(divisions + n_actions - 1), n_actions - 1):
        edges = (-1,) + bars + (divisions + n_actions - 1,)
        rows.append([edges[r + 1] - edges[r] - 1 for r in range(n_actions)])
    return np.array(rows, dtype=float) / divisions


@lru_cache(maxsize=64)
def _base_candidates(search: SimplexSearch, n_actions: int) -> np.ndarray:
    if n_actions == 1:
        out = np.ones((1, 1))
    elif search.vertex_only:
        out = np.eye(n_actions)
    else:
        divisions = max(1, int(round(1.0 / search.grid_step)))
        parts = [lattice(n_actions, divisions)]
        if search.n_random:
            parts.append(make_rng(search.seed, 0, n_actions).dirichlet(np.ones(n_actions), size=search.n_random))
        out = np.vstack(parts)
    out = out[np.lexsort(out.T[::-1])]
    out.setflags(write=False)
    return out


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean projection onto the probability simplex (sort-based)."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    n = v.shape[1]
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(v.shape[0]), rho] / (rho + 1)
    w = np.maximum(v - theta[:, None], 0.0)
    return w / w.sum(axis=1, keepdims=True)
