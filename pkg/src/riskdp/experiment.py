"""Replicated learner-vs-oracle study: relative value errors and policy risk gaps."""
from __future__ import annotations

import csv
import dataclasses
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .io import content_hash, write_json
from .learner import AlgorithmConfig, MlpHyper, QGrid, run_algorithm
from .mdp import SimplexPolicy, check_coverage, derive_seed, exploration_policy, gen_random_mdp, load_model, simulate
from .oracle import brute_force_policy_eval_sweep, horizon_for, nested_risk_eval, value_iteration
from .risk import RiskSpec, load_risk_spec
from .simplex import SimplexSearch

log = logging.getLogger(__name__)

REL_FLOOR = 1e-6
CSV_HEADER = ("replica", "state", "v_hat", "v_star", "rel_err")


@dataclass(frozen=True)
class ExperimentConfig:
    n_states: int = 4
    n_actions: int = 4
    gamma: float = 0.3
    c_max: float = 1.0
    cost_kind: str = "beta"
    model_path: str | None = None
    risk_spec: str = "section4"
    normalize: bool = False
    exploration: str = "random"
    exploration_floor: float = 0.05
    t_max: int = 10000
    x0: int = 0
    m_grid: int = 100
    grid_range: str = "c_max"
    backend: str = "table"
    search: dict = field(default_factory=dict)
    oracle_search: dict = field(default_factory=dict)
    oracle_tol: float = 1e-8
    beta_points: int = 200
    stop_tol: float = 1e-4
    max_outer: int = 50
    mlp: dict = field(default_factory=dict)
    compare_deterministic: bool = False
    replicas: int = 10
    seed: int = 0
    out_dir: str | None = None
    rel_floor: float = REL_FLOOR

    def __post_init__(self):
        if self.replicas < 1:
            raise ValidationError("replicas must be at least 1")
        if self.exploration not in ("random", "uniform"):
            raise ValidationError(f"unknown exploration policy {self.exploration!r}")
        if self.grid_range not in ("c_max", "value_bound"):
            raise ValidationError("grid_range must be 'c_max' or 'value_bound'")
        if self.model_path is not None and not Path(self.model_path).exists():
            raise ValidationError(f"model file {self.model_path} not found")
        if self.risk_spec != "section4" and not Path(self.risk_spec).exists():
            raise ValidationError(f"risk spec file {self.risk_spec} not found")
        self.load_spec()
        SimplexSearch(**self.search)
        SimplexSearch(**self.oracle_search)
        MlpHyper(**self.mlp)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        return content_hash(d)

    def load_spec(self) -> RiskSpec:
        return load_risk_spec(self.risk_spec, normalize=self.normalize)

    def grid_q_max(self) -> float:
        return self.c_max if self.grid_range == "c_max" else self.c_max / (1.0 - self.gamma)


@dataclass
class ReplicaResult:
    replica: int
    seeds: dict
    v_hat: np.ndarray | None = None
    v_star: np.ndarray | None = None
    rel_err: np.ndarray | None = None
    risk_gap: np.ndarray | None = None
    outer_iterations: int = 0
    converged: bool = False
    oracle_iterations: int = 0
    coverage_min: int = 0
    interior_gain: np.ndarray | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in dataclasses.asdict(self).items()}


def relative_errors(v_hat, v_star, floor: float = REL_FLOOR) -> np.ndarray:
    v_hat, v_star = np.asarray(v_hat, dtype=float), np.asarray(v_star, dtype=float)
    return np.abs(v_hat - v_star) / np.maximum(v_star, floor)


def run_replica(config: ExperimentConfig, r: int) -> ReplicaResult:
    seeds = {name: derive_seed(config.seed, r, s) for s, name in
             enumerate(("model", "exploration", "data", "learner", "search"))}
    res = ReplicaResult(replica=r, seeds=seeds)
    try:
        spec = config.load_spec()
        if config.model_path:
            model = load_model(config.model_path)
        else:
            model = gen_random_mdp(config.n_states, config.n_actions, config.cost_kind, config.c_max,
                                   config.gamma, seed=seeds["model"])
        if config.exploration == "random":
            policy = exploration_policy(model.n_states, model.n_actions, seeds["exploration"],
                                        config.exploration_floor)
        else:
            policy = SimplexPolicy.uniform(model.n_states, model.n_actions)
        data = simulate(model, policy, config.t_max, config.x0, seed=seeds["data"])
        res.coverage_min = int(check_coverage(data, model.n_states, model.n_actions).counts.min())

        oracle_search = SimplexSearch(**{"seed": seeds["search"] % 2**32, **config.oracle_search})
        if config.compare_deterministic:
            sweep = brute_force_policy_eval_sweep(model, spec, oracle_search, config.oracle_tol, config.beta_points)
            oracle = sweep.solution
            res.interior_gain = sweep.interior_gain
        else:
            oracle = value_iteration(model, spec, tol=config.oracle_tol, search=oracle_search,
                                     beta_points=config.beta_points)
        res.v_star, res.oracle_iterations = oracle.v_star, oracle.iterations

        grid = QGrid.uniform(config.m_grid, config.grid_q_max())
        algo = AlgorithmConfig(gamma=model.gamma, c_max=model.c_max, backend=config.backend,
                               search=SimplexSearch(**{"seed": seeds["search"] % 2**32, **config.search}),
                               stop_tol=config.stop_tol, max_outer=config.max_outer,
                               mlp=MlpHyper(**config.mlp), seed=seeds["learner"] % 2**31)
        learned = run_algorithm(data, spec, grid, algo)
        res.v_hat = learned.v_hat
        res.outer_iterations, res.converged = len(learned.history), learned.converged
        res.rel_err = relative_errors(learned.v_hat, oracle.v_star, config.rel_floor)
        horizon = horizon_for(model.gamma, model.c_max)
        res.risk_gap = nested_risk_eval(model, spec, learned.pi_hat, horizon, config.beta_points) - oracle.v_star
    except Exception as exc:  # recorded per replica; the sweep goes on
        res.error = f"{type(exc).__name__}: {exc}"
        log.warning("replica %d failed: %s\n%s", r, res.error, traceback.format_exc())
    return res


@dataclass
class ErrorReport:
    config: ExperimentConfig
    results: list
    notes: list = field(default_factory=list)

    @property
    def rel_errors(self) -> np.ndarray:
        """Relative errors ``[replica, state]`` of the successful replicas."""
        ok = [r.rel_err for r in self.results if r.error is None]
        return np.array(ok) if ok else np.empty((0, 0))

    @property
    def failures(self) -> list:
        return [r for r in self.results if r.error is not None]

    def summary(self) -> dict:
        errs = self.rel_errors
        gaps = np.array([r.risk_gap for r in self.results if r.error is None])
        out = {
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "notes": self.notes,
            "replicas": [r.to_dict() for r in self.results],
            "n_failed": len(self.failures),
        }
        if errs.size:
            out.update({
                "rel_err_median": float(np.median(errs)),
                "rel_err_max": float(errs.max()),
                "rel_err_p99": float(np.percentile(errs, 99)),
                "risk_gap_max": float(gaps.max()),
            })
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in self.results:
                if r.error is not None:
                    continue
                for i in range(len(r.v_hat)):
                    w.writerow((r.replica, i, f"{r.v_hat[i]:.17g}", f"{r.v_star[i]:.17g}", f"{r.rel_err[i]:.17g}"))

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out / "errors.csv", out / "summary.json"
        self.write_csv(csv_path)
        write_json(json_path, self.summary())
        return csv_path, json_path


def replica_threads() -> int:
    env = os.environ.get("RISKDP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ValidationError(f"RISKDP_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


def run_experiment(config: ExperimentConfig, threads: int | None = None) -> ErrorReport:
    """Run every replica (possibly in parallel), collect errors in replica order, write files if asked."""
    threads = min(threads or replica_threads(), config.replicas)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_replica, [config] * config.replicas, range(config.replicas)))
    else:
        results = [run_replica(config, r) for r in range(config.replicas)]
    spec = config.load_spec()
    notes = [f"relative error denominator max(v*, {config.rel_floor:g})", *spec.notes]
    if config.grid_range == "c_max":
        notes.append("q-grid spans [0, c_max]; [0, c_max/(1-gamma)] is the theoretically safe range")
    report = ErrorReport(config=config, results=results, notes=notes)
    if config.out_dir:
        report.write(config.out_dir)
    return report
