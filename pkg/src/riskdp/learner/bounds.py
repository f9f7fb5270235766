"""Finite-sample guarantee calculator and an empirical check of the transition-estimate tail bound."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..mdp import MdpModel, SimplexPolicy, derive_seed, simulate
from .estimation import mle_transition


@dataclass(frozen=True)
class BoundParams:
    n_states: int
    n_actions: int
    epsilon_e: float
    ell: int
    t_max: int
    epsilon: float
    b: float
    epsilon_theta: float
    epsilon_v: float
    gamma: float
    c_max: float
    n: int
    v0_gap: float

    def __post_init__(self):
        problems = []
        if self.n_states < 1 or self.n_actions < 1:
            problems.append("state/action counts must be positive")
        if not 0 < self.epsilon <= 1:
            problems.append("epsilon must lie in (0, 1]")
        if not 0 < self.epsilon_e < 1:
            problems.append("epsilon_e must lie in (0, 1)")
        if not 0 < self.b < 1:
            problems.append("b must lie in (0, 1)")
        if int(self.ell) != self.ell or self.ell < 1:
            problems.append("ell must be a positive integer")
        if not self.t_max > self.ell:
            problems.append("t_max must exceed ell")
        if self.epsilon_theta < 0 or self.epsilon_v < 0 or self.v0_gap < 0 or self.n < 0:
            problems.append("epsilon_theta, epsilon_v, v0_gap and n must be non-negative")
        if not 0 < self.gamma < 1 or not self.c_max > 0:
            problems.append("need gamma in (0, 1) and c_max > 0")
        if problems:
            raise ValidationError("; ".join(problems))


def theorem_bound(params: BoundParams) -> tuple[float, float]:
    """Return ``(probability lower bound, error upper bound)`` of the convergence guarantee."""
    p = params
    blocks = (p.t_max - 1) // p.ell
    tail = (math.exp(-(p.epsilon_e ** 2 / 4.0) * blocks)
            + math.exp(-(p.epsilon ** 2 * p.epsilon_e ** 2 / (8.0 * p.ell)) * blocks))
    prob = 1.0 - 3.0 * p.n_states ** 2 * p.n_actions * tail
    err = (p.gamma ** p.n * p.v0_gap
           + p.c_max * p.epsilon / (p.b * (1.0 - p.gamma) ** 2)
           + (p.epsilon_theta / p.b + p.epsilon_v) / (1.0 - p.gamma))
    return min(1.0, max(0.0, prob)), err


def exploration_constant(model: MdpModel, policy: SimplexPolicy, ell: int = 1) -> float:
    """Smallest probability, over current (state, action) and target pair, of visiting the target within ``ell`` steps."""
    n, K = model.n_states, model.n_actions
    # P[(x, a), (x', a')] = T^a_{x x'} * pi(a' | x')
    P = (np.transpose(model.transitions, (1, 0, 2))[:, :, :, None] * policy.weights[None, None, :, :]
         ).reshape(n * K, n * K)
    worst = 1.0
    for target in range(n * K):
        to_target = P[:, target]
        h = to_target.copy()
        for _ in range(ell - 1):
            h_prev = h.copy()
            h_prev[target] = 0.0
            h = to_target + P @ h_prev
        worst = min(worst, float(h.min()))
    return worst


def lemma_tail_bound(t_max: int, ell: int, epsilon_e: float, epsilon: float) -> tuple[float, int]:
    """Best per-entry bound on ``P(|T_hat - T| > epsilon)`` over admissible integer N, and that N."""
    blocks = (t_max - 1) // ell
    limit = epsilon_e * blocks
    N = np.arange(1, max(1, math.ceil(limit)))
    N = N[N < limit]
    if N.size == 0 or blocks == 0:
        return math.inf, 0
    vals = np.exp(-(N - limit) ** 2 / blocks) + 2.0 * np.exp(-(epsilon ** 2) * N.astype(float) ** 2 / (2.0 * t_max))
    j = int(np.argmin(vals))
    return float(vals[j]), int(N[j])


@dataclass
class EstPReport:
    empirical_frequency: float
    bound: float
    per_entry_bound: float
    best_N: int
    epsilon_e: float
    ell: int
    deviations: np.ndarray
    n_seeds: int

    @property
    def vacuous(self) -> bool:
        return self.bound >= 1.0

    @property
    def holds(self) -> bool:
        return self.vacuous or self.empirical_frequency <= self.bound

    def to_dict(self) -> dict:
        return {"empirical_frequency": self.empirical_frequency, "bound": self.bound,
                "per_entry_bound": self.per_entry_bound, "best_N": self.best_N, "epsilon_e": self.epsilon_e,
                "ell": self.ell, "vacuous": self.vacuous, "holds": self.holds, "n_seeds": self.n_seeds,
                "median_deviation": float(np.median(self.deviations))}


def lemma_estp_suite(model: MdpModel, policy: SimplexPolicy, t_max: int, epsilon: float, n_seeds: int,
                     ell: int = 1, seed: int = 0, x0: int = 0) -> EstPReport:
    """Empirical frequency of ``max |T_hat - T| > epsilon`` against the union of the per-entry tail bounds.

    The visitation constant is measured exactly from the model and policy for a
    window of ``ell`` steps. Pairs never visited count as deviations.
    """
    if not 0 < epsilon < 1:
        raise ValidationError("epsilon must lie in (0, 1)")
    eps_e = exploration_constant(model, policy, ell) * (1.0 - 1e-9)
    devs = np.empty(n_seeds)
    for s in range(n_seeds):
        data = simulate(model, policy, t_max, x0=x0, seed=derive_seed(seed, s))
        est = mle_transition(data, model.n_states, model.n_actions, warn=False)
        devs[s] = np.inf if est.unvisited.any() else est.max_deviation(model.transitions)
    if eps_e > 0:
        per_entry, best_N = lemma_tail_bound(t_max, ell, eps_e, epsilon)
    else:
        per_entry, best_N = math.inf, 0
    union = min(1.0, model.n_states ** 2 * model.n_actions * per_entry)
    return EstPReport(empirical_frequency=float(np.mean(devs > epsilon)), bound=union,
                      per_entry_bound=per_entry, best_N=best_N, epsilon_e=eps_e, ell=ell,
                      deviations=devs, n_seeds=n_seeds)
