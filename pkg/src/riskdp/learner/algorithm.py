"""Alternating fit / update loop producing the learned value function and policy."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..mdp import Dataset, SimplexPolicy
from ..risk import RiskSpec
from ..simplex import SimplexSearch
from .approximators import GApproximator, MlpHyper, QGrid, approximator_from_dict, fit_g_mlp, fit_g_table
from .update import value_policy_update

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AlgorithmConfig:
    gamma: float
    c_max: float
    backend: str = "table"
    search: SimplexSearch = field(default_factory=SimplexSearch)
    stop_tol: float = 1e-4
    max_outer: int = 50
    mlp: MlpHyper = field(default_factory=MlpHyper)
    warm_start: bool = True
    seed: int = 0
    v0: tuple | None = None

    def __post_init__(self):
        if self.backend not in ("table", "mlp"):
            raise ValidationError(f"unknown backend {self.backend!r}")
        if not (0 < self.gamma < 1) or not self.c_max > 0:
            raise ValidationError("need gamma in (0, 1) and c_max > 0")
        if self.max_outer < 1 or self.stop_tol <= 0:
            raise ValidationError("need max_outer >= 1 and stop_tol > 0")

    @property
    def value_cap(self) -> float:
        return self.c_max / (1.0 - self.gamma)

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "c_max": self.c_max, "backend": self.backend,
                "search": self.search.to_dict(), "stop_tol": self.stop_tol, "max_outer": self.max_outer,
                "mlp": self.mlp.to_dict(), "warm_start": self.warm_start, "seed": self.seed,
                "v0": None if self.v0 is None else list(self.v0)}


@dataclass
class LearnedSolution:
    v_hat: np.ndarray
    pi_hat: SimplexPolicy
    approximator: GApproximator
    history: list
    converged: bool
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"v_hat": self.v_hat.tolist(), "pi_hat": self.pi_hat.tolist(),
                "backend": self.approximator.backend, "grid": self.approximator.grid.points.tolist(),
                "approximator": self.approximator.to_dict(), "history": self.history,
                "converged": self.converged, **self.meta}

    @classmethod
    def from_dict(cls, d: dict) -> "LearnedSolution":
        known = {"v_hat", "pi_hat", "backend", "grid", "approximator", "history", "converged"}
        return cls(v_hat=np.asarray(d["v_hat"], dtype=float), pi_hat=SimplexPolicy(d["pi_hat"]),
                   approximator=approximator_from_dict(d["approximator"]), history=d["history"],
                   converged=d["converged"], meta={k: v for k, v in d.items() if k not in known})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "LearnedSolution":
        return cls.from_dict(json.loads(Path(path).read_text()))


def run_algorithm(dataset: Dataset, spec: RiskSpec, grid: QGrid, config: AlgorithmConfig) -> LearnedSolution:
    """Alternate surrogate fitting and the risk-based value/policy update until the values settle.

    Stops when ``||v_{n+1} - v_n||_inf < stop_tol`` or after ``max_outer``
    rounds; in the latter case the last iterate is returned with
    ``converged=False``.
    """
    if len(dataset) == 0:
        raise ValidationError("dataset is empty")
    n = dataset.n_states
    v = np.zeros(n) if config.v0 is None else np.asarray(config.v0, dtype=float)
    if v.shape != (n,):
        raise ValidationError("v0 has the wrong length")
    approx = None
    policy = None
    history = []
    converged = False
    for it in range(1, config.max_outer + 1):
        if config.backend == "table":
            approx = fit_g_table(dataset, v, grid, config.gamma, config.c_max)
        else:
            init = approx if (config.warm_start and approx is not None) else None
            approx = fit_g_mlp(dataset, v, grid, config.gamma, config.mlp, seed=config.seed + it, init=init)
        v_new, policy = value_policy_update(approx, spec, config.search, value_cap=config.value_cap,
                                            seed=config.seed + it)
        delta = float(np.max(np.abs(v_new - v)))
        history.append({"iteration": it, "delta": delta, "fit_loss": approx.fit_loss})
        log.debug("outer %d: delta=%.3e loss=%.3e", it, delta, approx.fit_loss)
        v = v_new
        if delta < config.stop_tol:
            converged = True
            break
    return LearnedSolution(v_hat=v, pi_hat=policy, approximator=approx, history=history, converged=converged,
                           meta={"config": config.to_dict()})
