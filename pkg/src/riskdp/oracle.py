"""Exact dynamic programming on a known model (the benchmark the learner is scored against)."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, ValidationError
from .mdp import MdpModel, SimplexPolicy
from .risk import DiscreteDistribution, GCurve, RiskSpec, convex_mixture_risk, curve_from_distribution
from .simplex import SimplexSearch

BETA_POINTS = 200


def _check_values(model: MdpModel, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (model.n_states,) or not np.all(np.isfinite(v)):
        raise ValidationError(f"value function must be a finite vector of length {model.n_states}")
    return v


def next_value_atoms(model: MdpModel, v, i: int, beta_points: int = BETA_POINTS):
    """Atoms ``C(i,k,j) + gamma v(j)`` with probabilities ``T^k_ij * w_d``; shapes ``[k, j*d]``."""
    atoms, w = model.cost_law(beta_points)
    z = atoms[i] + model.gamma * np.asarray(v)[None, :, None]          # [k, j, d]
    p = model.transitions[:, i, :, None] * w[None, None, :]           # [k, j, d]
    k = model.n_actions
    return z.reshape(k, -1), p.reshape(k, -1)


def action_curves(model: MdpModel, v, i: int, q_lo: float | None = None, q_hi: float | None = None,
                  beta_points: int = BETA_POINTS) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-action partial expectations and survivals on the union breakpoint set.

    Returns ``(q, G, S)`` with ``G[k, b] = E_k[(Z - q_b)_+]`` and
    ``S[k, b] = P_k(Z > q_b)`` for the one-step law ``Z = C(i,k,j) + gamma v(j)``.
    ``q`` covers every atom plus the interval ends, so mixtures ``lam @ G`` are
    exact piecewise-linear curves on it. By default the interval is
    ``[min(0, atoms), max(v_max, atoms)]``, which makes the q-infimum global.
    """
    z, p = next_value_atoms(model, v, i, beta_points)
    live = p > 0
    lo = min(0.0, float(z[live].min())) if q_lo is None else q_lo
    hi = max(model.v_max, float(z[live].max())) if q_hi is None else q_hi
    inner = np.unique(z[live])
    q = np.unique(np.concatenate(([lo], inner[(inner > lo) & (inner < hi)], [hi])))
    G = np.empty((model.n_actions, len(q)))
    S = np.empty((model.n_actions, len(q)))
    for k in range(model.n_actions):
        order = np.argsort(z[k])
        zs, ps = z[k, order], p[k, order]
        # tail sums over atoms strictly above each q
        tail_p = np.concatenate((np.cumsum(ps[::-1])[::-1], [0.0]))
        tail_pz = np.concatenate((np.cumsum((ps * zs)[::-1])[::-1], [0.0]))
        pos = np.searchsorted(zs, q, side="right")
        S[k] = tail_p[pos]
        G[k] = np.maximum(tail_pz[pos] - q * tail_p[pos], 0.0)
    S[:, -1] = 0.0
    return q, G, S


def exact_g(model: MdpModel, v, i: int, lam, beta_points: int = BETA_POINTS) -> GCurve:
    """Curve ``q -> sum_k lam_k sum_j T^k_ij (C(i,k,j) + gamma v(j) - q)_+`` of the one-step mixture law."""
    v = _check_values(model, v)
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (model.n_actions,) or np.any(lam < 0) or abs(lam.sum() - 1) > 1e-12:
        raise ValidationError("lambda must be a probability vector over actions")
    z, p = next_value_atoms(model, v, i, beta_points)
    probs = (lam[:, None] * p).ravel()
    return curve_from_distribution(DiscreteDistribution(z.ravel(), probs / probs.sum()))


def bellman_apply(model: MdpModel, spec: RiskSpec, v, search: SimplexSearch | None = None,
                  beta_points: int = BETA_POINTS, details: bool = False):
    """One application of the risk-averse Bellman operator.

    Returns ``(Sv, argmin policy)``; with ``details=True`` a third element
    holds ``base`` (the minimum over the fixed candidate set only) and
    ``gain`` (``base - Sv``, the refinement gain; the documented search slack).
    """
    v = _check_values(model, v)
    search = search or SimplexSearch()
    sv = np.empty(model.n_states)
    base = np.empty(model.n_states)
    lams = np.empty((model.n_states, model.n_actions))
    for i in range(model.n_states):
        q, G, S = action_curves(model, v, i, beta_points=beta_points)
        sv[i], lams[i], base[i] = search.minimize(lambda L: convex_mixture_risk(q, G, S, L, spec),
                                                  model.n_actions, stream=i)
    policy = SimplexPolicy(lams)
    if details:
        return sv, policy, {"base": base, "gain": base - sv}
    return sv, policy


def policy_apply(model: MdpModel, spec: RiskSpec, v, policy: SimplexPolicy,
                 beta_points: int = BETA_POINTS) -> np.ndarray:
    """Risk of ``C + gamma v(X')`` per state under a fixed randomized policy."""
    v = _check_values(model, v)
    out = np.empty(model.n_states)
    for i in range(model.n_states):
        q, G, S = action_curves(model, v, i, beta_points=beta_points)
        out[i] = convex_mixture_risk(q, G, S, policy[i][None, :], spec)[0]
    return out


def iteration_bound(tol: float, gamma: float, c_max: float) -> int:
    """Contraction bound on the number of sweeps from v = 0 to reach residual ``tol``."""
    return max(1, math.ceil(math.log(tol * (1 - gamma) / c_max) / math.log(gamma)))


@dataclass
class OracleSolution:
    v_star: np.ndarray
    pi_star: SimplexPolicy
    iterations: int
    residual: float
    search: SimplexSearch
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "v_star": self.v_star.tolist(),
            "pi_star": self.pi_star.tolist(),
            "residual": self.residual,
            "iterations": self.iterations,
            "search": self.search.to_dict(),
            "history": list(self.history),
            **self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OracleSolution":
        known = {"v_star", "pi_star", "residual", "iterations", "search", "history"}
        return cls(v_star=np.array(d["v_star"], dtype=float), pi_star=SimplexPolicy(d["pi_star"]),
                   iterations=int(d["iterations"]), residual=float(d["residual"]),
                   search=SimplexSearch(**d["search"]), history=list(d.get("history", [])),
                   meta={k: v for k, v in d.items() if k not in known})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "OracleSolution":
        return cls.from_dict(json.loads(Path(path).read_text()))


def value_iteration(model: MdpModel, spec: RiskSpec, tol: float = 1e-8, max_iter: int = 500,
                    search: SimplexSearch | None = None, beta_points: int = BETA_POINTS) -> OracleSolution:
    """Iterate ``v <- Sv`` from ``v = 0`` until ``||Sv - v||_inf <= tol``.

    The returned ``v_star`` is the last image ``Sv`` and ``pi_star`` its argmin
    policy; ``residual`` is ``||Sv - v||_inf`` of that final sweep.
    """
    if not tol > 0:
        raise ValidationError("tol must be positive")
    search = search or SimplexSearch()
    v = np.zeros(model.n_states)
    history = []
    residual = math.inf
    for n in range(1, max_iter + 1):
        sv, policy = bellman_apply(model, spec, v, search, beta_points)
        residual = float(np.max(np.abs(sv - v)))
        history.append(residual)
        v = sv
        if residual <= tol:
            return OracleSolution(v_star=v, pi_star=policy, iterations=n, residual=residual,
                                  search=search, history=history)
    raise ConvergenceError("value iteration did not converge", residual, max_iter)


def nested_risk_eval(model: MdpModel, spec: RiskSpec, policy: SimplexPolicy, horizon: int,
                     beta_points: int = BETA_POINTS) -> np.ndarray:
    """Finite-horizon nested risk of the discounted cost stream under a fixed policy.

    Backward recursion over ``horizon + 1`` one-step costs, starting from a zero
    terminal value.
    """
    if horizon < 0:
        raise ValidationError("horizon must be non-negative")
    w = np.zeros(model.n_states)
    for _ in range(horizon + 1):
        w = policy_apply(model, spec, w, policy, beta_points)
    return w


def horizon_for(gamma: float, c_max: float, tol: float = 1e-12) -> int:
    """Smallest T with ``gamma^T c_max / (1 - gamma) <= tol``."""
    return max(0, math.ceil(math.log(tol * (1 - gamma) / c_max) / math.log(gamma)))


@dataclass
class SweepReport:
    solution: OracleSolution
    v_deterministic: np.ndarray
    pi_deterministic: SimplexPolicy

    @property
    def interior_gain(self) -> np.ndarray:
        """How much the best randomized policy improves on the best deterministic one, per state."""
        return self.v_deterministic - self.solution.v_star

    def interior_wins(self, threshold: float = 1e-6) -> np.ndarray:
        return self.interior_gain > threshold

    def to_dict(self) -> dict:
        return {
            "oracle": self.solution.to_dict(),
            "v_deterministic": self.v_deterministic.tolist(),
            "pi_deterministic": self.pi_deterministic.tolist(),
            "interior_gain": self.interior_gain.tolist(),
        }


def brute_force_policy_eval_sweep(model: MdpModel, spec: RiskSpec, search: SimplexSearch | None = None,
                                  tol: float = 1e-8, beta_points: int = BETA_POINTS) -> SweepReport:
    """Dense-search benchmark plus the best deterministic (vertex-only) value for comparison."""
    solution = value_iteration(model, spec, tol=tol, search=search or SimplexSearch(), beta_points=beta_points)
    det = value_iteration(model, spec, tol=tol, search=SimplexSearch.vertices(), beta_points=beta_points)
    return SweepReport(solution=solution, v_deterministic=det.v_star, pi_deterministic=det.pi_star)
