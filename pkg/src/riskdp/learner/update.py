"""Value and policy update through the risk functional of a fitted surrogate."""
from __future__ import annotations

import numpy as np

from ..mdp import SimplexPolicy, make_rng
from ..risk import RiskSpec, risk_at_points
from ..simplex import SimplexSearch
from .approximators import GApproximator, MlpApproximator

Q_RESTARTS = 8
Q_STEPS = 200


def _refine_q_mlp(net: MlpApproximator, i: int, lam: np.ndarray, spec: RiskSpec, grid_best: np.ndarray,
                  rng) -> np.ndarray:
    """Projected gradient descent on ``q + f_lam(q)/xi`` from random starts, per atom location.

    Returns per-xi minima, never worse than ``grid_best``.
    """
    q_max = net.grid.q_max
    K, n_xi = net.n_actions, len(spec.xis)
    q = rng.uniform(0.0, q_max, size=(n_xi, Q_RESTARTS))
    inv = (1.0 / spec.xis)[:, None]
    ks = np.arange(K)
    lr = 0.01 * q_max * spec.xis[:, None]

    def objective(qs):
        f = net.evaluate(i, ks[None, None, :], qs[:, :, None])          # [xi, r, k]
        return qs + inv * (f @ lam)

    for _ in range(Q_STEPS):
        d = net.dq(i, ks[None, None, :], q[:, :, None]) @ lam
        q = np.clip(q - lr * (1.0 + inv * d), 0.0, q_max)
    return np.minimum(grid_best, objective(q).min(axis=1))


def value_policy_update(approximator: GApproximator, spec: RiskSpec, search: SimplexSearch | None = None,
                        value_cap: float | None = None, seed: int = 0):
    """Per state: minimise over the simplex the Kusuoka risk of the surrogate mixture.

    The inner q-minimum runs over the grid range. For the table backend the grid
    points are the curve's breakpoints, so the scan is exact; the MLP backend
    scans the grid and then polishes the chosen mixture by multi-start gradient
    descent in q. Values are clamped into ``[0, value_cap]``.
    """
    search = search or SimplexSearch()
    F = approximator.grid_values()
    q = approximator.grid.points
    n_states, n_actions = F.shape[0], F.shape[1]
    cap = approximator.grid.q_max if value_cap is None else value_cap
    v = np.empty(n_states)
    lams = np.empty((n_states, n_actions))
    for i in range(n_states):
        G = F[i]
        v[i], lams[i], _ = search.minimize(lambda L: risk_at_points(q, L @ G, spec), n_actions, stream=i)
        if isinstance(approximator, MlpApproximator):
            g_mix = lams[i] @ G
            grid_best = np.min(q[None, :] + g_mix[None, :] / spec.xis[:, None], axis=1)
            inner = _refine_q_mlp(approximator, i, lams[i], spec, grid_best, make_rng(seed, 2, i))
            v[i] = float(np.max(spec.weight_matrix @ inner))
    return np.clip(v, 0.0, cap), SimplexPolicy(lams)
