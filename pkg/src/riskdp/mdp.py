"""Finite MDP model, cost laws, stationary randomized policies and trajectory simulation.

All random draws go through :func:`make_rng`, which builds a numpy ``Generator``
on the Philox4x64 counter-based bit generator. Seeds are expanded with
``SeedSequence([seed, *stream])`` so that independent streams (replicas,
states, sub-tasks) are addressed by integer counters and reproduce across
platforms.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from scipy import special

from .errors import ValidationError

ROW_TOL = 1e-12
COST_KINDS = ("deterministic", "beta")


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for ``seed`` and an optional integer stream path."""
    ss = np.random.SeedSequence([int(seed), *(int(s) for s in stream)])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *stream: int) -> int:
    """Integer seed for a sub-stream, e.g. ``derive_seed(master, replica, task)``."""
    return int(np.random.SeedSequence([int(seed), *(int(s) for s in stream)]).generate_state(1, np.uint64)[0])


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CostModel:
    """Bounded cost law C(i, k, j).

    ``kind="deterministic"`` uses ``table[i, k, j]``; ``kind="beta"`` draws
    ``c_max * Beta(alpha[i, k, j], beta[i, k, j])``.
    """

    kind: str
    c_max: float
    table: np.ndarray | None = None
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValidationError(f"unknown cost kind {self.kind!r}")
        if not (np.isfinite(self.c_max) and self.c_max > 0):
            raise ValidationError(f"c_max must be positive, got {self.c_max}")
        object.__setattr__(self, "c_max", float(self.c_max))
        if self.kind == "deterministic":
            if self.table is None:
                raise ValidationError("deterministic cost model needs a table")
            table = _frozen(self.table)
            if table.ndim != 3:
                raise ValidationError("cost table must be 3-D [i][k][j]")
            if np.any(table < 0) or np.any(table > self.c_max) or not np.all(np.isfinite(table)):
                raise ValidationError("cost table entries must lie in [0, c_max]")
            object.__setattr__(self, "table", table)
        else:
            if self.alpha is None or self.beta is None:
                raise ValidationError("beta cost model needs alpha and beta arrays")
            alpha, beta = _frozen(self.alpha), _frozen(self.beta)
            if alpha.ndim != 3 or alpha.shape != beta.shape:
                raise ValidationError("alpha/beta must be 3-D arrays of equal shape")
            if not (np.all(alpha > 0) and np.all(beta > 0)):
                raise ValidationError("alpha/beta entries must be strictly positive")
            object.__setattr__(self, "alpha", alpha)
            object.__setattr__(self, "beta", beta)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.table if self.kind == "deterministic" else self.alpha).shape

    def sample(self, i, k, j, rng: np.random.Generator):
        """Vectorised cost draw; ``i, k, j`` may be scalars or equal-shape index arrays."""
        if self.kind == "deterministic":
            return self.table[i, k, j]
        draws = rng.beta(self.alpha[i, k, j], self.beta[i, k, j])
        return self.c_max * np.clip(draws, 0.0, 1.0)

    def mean(self) -> np.ndarray:
        if self.kind == "deterministic":
            return np.asarray(self.table)
        return self.c_max * self.alpha / (self.alpha + self.beta)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "c_max": self.c_max}
        if self.kind == "deterministic":
            out["table"] = self.table.tolist()
        else:
            out["alpha"] = self.alpha.tolist()
            out["beta"] = self.beta.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "CostModel":
        return cls(kind=d["kind"], c_max=d["c_max"], table=d.get("table"),
                   alpha=d.get("alpha"), beta=d.get("beta"))


def beta_quantile_atoms(alpha, beta, n_points: int) -> np.ndarray:
    """Equal-mass discretisation of Beta(alpha, beta) on [0, 1].

    Bin ``d`` covers the probability interval ``[d/n, (d+1)/n]``; its atom is the
    conditional mean of the law on that bin, so the discrete law has the same
    mean and each atom lies inside its bin. Output shape ``alpha.shape + (n_points,)``.
    """
    alpha = np.asarray(alpha, dtype=float)[..., None]
    beta = np.asarray(beta, dtype=float)[..., None]
    levels = np.linspace(0.0, 1.0, n_points + 1)
    edges = special.betaincinv(alpha, beta, levels)
    edges[..., 0], edges[..., -1] = 0.0, 1.0
    upper = special.betainc(alpha + 1.0, beta, edges)
    mean = alpha / (alpha + beta)
    atoms = mean * np.diff(upper, axis=-1) * n_points
    lo, hi = edges[..., :-1], edges[..., 1:]
    return np.clip(atoms, lo, hi)


@dataclass(frozen=True, eq=False)
class MdpModel:
    """Finite MDP with per-action transition matrices ``transitions[k, i, j]``."""

    transitions: np.ndarray
    cost: CostModel
    gamma: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        t = _frozen(self.transitions)
        if t.ndim != 3 or t.shape[1] != t.shape[2] or t.shape[0] < 1 or t.shape[1] < 1:
            raise ValidationError(f"transitions must have shape [k][i][j], got {t.shape}")
        if not np.all(np.isfinite(t)) or np.any(t < 0):
            raise ValidationError("transition probabilities must be finite and non-negative")
        if np.max(np.abs(t.sum(axis=2) - 1.0)) > ROW_TOL:
            raise ValidationError("every transition row must sum to 1")
        if not (0.0 < self.gamma < 1.0):
            raise ValidationError(f"gamma must lie strictly inside (0, 1), got {self.gamma}")
        n_actions, n_states, _ = t.shape
        if self.cost.shape != (n_states, n_actions, n_states):
            raise ValidationError(
                f"cost arrays must have shape {(n_states, n_actions, n_states)}, got {self.cost.shape}")
        object.__setattr__(self, "transitions", t)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[0]

    @property
    def c_max(self) -> float:
        return self.cost.c_max

    @property
    def v_max(self) -> float:
        """Upper end of the admissible value range c_max / (1 - gamma)."""
        return self.c_max / (1.0 - self.gamma)

    def cost_law(self, n_points: int = 200) -> tuple[np.ndarray, np.ndarray]:
        """Discrete cost law per (i, k, j): atoms ``[i, k, j, d]`` and weights ``[d]``.

        Deterministic costs give a single atom; Beta costs use ``n_points``
        equal-mass quantile bins.
        """
        if self.cost.kind == "deterministic":
            return self.cost.table[..., None], np.ones(1)
        key = ("cost_law", n_points)
        if key not in self._cache:
            atoms = self.c_max * beta_quantile_atoms(self.cost.alpha, self.cost.beta, n_points)
            atoms.setflags(write=False)
            self._cache[key] = (atoms, np.full(n_points, 1.0 / n_points))
        return self._cache[key]

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "transitions": self.transitions.tolist(),
            "cost": self.cost.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MdpModel":
        model = cls(transitions=d["transitions"], cost=CostModel.from_dict(d["cost"]), gamma=d["gamma"])
        if (d.get("n_states", model.n_states), d.get("n_actions", model.n_actions)) != (
                model.n_states, model.n_actions):
            raise ValidationError("n_states/n_actions do not match the transition array")
        return model

    def __eq__(self, other):
        if not isinstance(other, MdpModel):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SimplexPolicy:
    """Stationary randomized policy; ``weights[i]`` is the action distribution at state i."""

    weights: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 2:
            raise ValidationError("policy weights must be a 2-D [state][action] array")
        if np.any(w < 0) or np.max(np.abs(w.sum(axis=1) - 1.0)) > ROW_TOL:
            raise ValidationError("each policy row must be a probability vector")
        object.__setattr__(self, "weights", w)

    @property
    def n_states(self) -> int:
        return self.weights.shape[0]

    @property
    def n_actions(self) -> int:
        return self.weights.shape[1]

    def __getitem__(self, i) -> np.ndarray:
        return self.weights[i]

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "SimplexPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions: Sequence[int], n_actions: int) -> "SimplexPolicy":
        w = np.zeros((len(actions), n_actions))
        w[np.arange(len(actions)), actions] = 1.0
        return cls(w)

    def tolist(self) -> list:
        return self.weights.tolist()


def exploration_policy(n_states: int, n_actions: int, seed: int, floor: float = 0.05) -> SimplexPolicy:
    """Random stationary policy with every action probability at least ``floor``.

    Draws each state's row from a flat Dirichlet and mixes it with the uniform
    floor: ``floor + (1 - n_actions * floor) * w``.
    """
    if n_actions * floor > 1.0:
        raise ValidationError(f"floor {floor} infeasible for {n_actions} actions")
    w = make_rng(seed).dirichlet(np.ones(n_actions), size=n_states)
    w = floor + (1.0 - n_actions * floor) * w
    return SimplexPolicy(w / w.sum(axis=1, keepdims=True))


def _validate_dims(n_states, n_actions):
    if int(n_states) != n_states or int(n_actions) != n_actions or n_states < 1 or n_actions < 1:
        raise ValidationError(f"need positive integer dimensions, got ({n_states}, {n_actions})")


def gen_random_mdp(n_states: int, n_actions: int, cost_kind: str = "deterministic",
                   c_max: float = 1.0, gamma: float = 0.3, seed: int = 0) -> MdpModel:
    """Random instance: flat-Dirichlet transition rows, uniform cost table or Beta(U[0.5,5], U[0.5,5])."""
    _validate_dims(n_states, n_actions)
    if not (0.0 < gamma < 1.0):
        raise ValidationError(f"gamma must lie strictly inside (0, 1), got {gamma}")
    if not c_max > 0:
        raise ValidationError(f"c_max must be positive, got {c_max}")
    rng = make_rng(seed)
    t = rng.dirichlet(np.ones(n_states), size=(n_actions, n_states))
    t /= t.sum(axis=2, keepdims=True)
    shape = (n_states, n_actions, n_states)
    if cost_kind == "deterministic":
        cost = CostModel("deterministic", c_max, table=rng.uniform(0.0, c_max, size=shape))
    elif cost_kind == "beta":
        cost = CostModel("beta", c_max, alpha=rng.uniform(0.5, 5.0, size=shape),
                         beta=rng.uniform(0.5, 5.0, size=shape))
    else:
        raise ValidationError(f"unknown cost kind {cost_kind!r}")
    return MdpModel(transitions=t, cost=cost, gamma=gamma)


def sample_cost(model: MdpModel, i: int, k: int, j: int, rng: np.random.Generator) -> float:
    n, m = model.n_states, model.n_actions
    if not (0 <= i < n and 0 <= k < m and 0 <= j < n):
        raise ValidationError(f"ids out of range: ({i}, {k}, {j})")
    return float(model.cost.sample(i, k, j, rng))


class Transition(NamedTuple):
    t: int
    x: int
    a: int
    x_next: int
    c: float


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed transitions stored column-wise; iterating yields :class:`Transition` records."""

    x: np.ndarray
    a: np.ndarray
    x_next: np.ndarray
    c: np.ndarray
    n_states: int
    n_actions: int
    t0: int = 1

    def __post_init__(self):
        x, a, xn = (_frozen(v, dtype=np.int64) for v in (self.x, self.a, self.x_next))
        c = _frozen(self.c)
        if not (x.shape == a.shape == xn.shape == c.shape) or x.ndim != 1:
            raise ValidationError("dataset columns must be 1-D and of equal length")
        _validate_dims(self.n_states, self.n_actions)
        if len(x) and (x.min() < 0 or xn.min() < 0 or a.min() < 0 or max(x.max(), xn.max()) >= self.n_states
                       or a.max() >= self.n_actions):
            raise ValidationError("state/action ids out of range")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise ValidationError("costs must be finite and non-negative")
        for name, v in (("x", x), ("a", a), ("x_next", xn), ("c", c)):
            object.__setattr__(self, name, v)

    def __len__(self) -> int:
        return len(self.x)

    def __iter__(self) -> Iterator[Transition]:
        for n in range(len(self)):
            yield Transition(self.t0 + n, int(self.x[n]), int(self.a[n]), int(self.x_next[n]), float(self.c[n]))

    @property
    def is_path(self) -> bool:
        return bool(np.all(self.x_next[:-1] == self.x[1:]))

    @classmethod
    def from_transitions(cls, transitions: Sequence, n_states: int, n_actions: int) -> "Dataset":
        rows = [tuple(tr) for tr in transitions]
        if rows and len(rows[0]) == 5:
            rows = [r[1:] for r in rows]
        cols = list(zip(*rows)) if rows else [(), (), (), ()]
        return cls(*(np.array(col) for col in cols), n_states=n_states, n_actions=n_actions)


def simulate(model: MdpModel, policy: SimplexPolicy, t_max: int, x0: int = 0, seed: int = 0) -> Dataset:
    """Run one trajectory of ``t_max`` states under ``policy``; returns its ``t_max - 1`` transitions."""
    if t_max < 2:
        raise ValidationError(f"t_max must be at least 2, got {t_max}")
    if not 0 <= x0 < model.n_states:
        raise ValidationError(f"initial state {x0} out of range")
    if policy.weights.shape != (model.n_states, model.n_actions):
        raise ValidationError("policy shape does not match the model")
    rng = make_rng(seed)
    n_steps = t_max - 1
    u_act = rng.random(n_steps)
    u_next = rng.random(n_steps)
    act_cdf = np.cumsum(policy.weights, axis=1)
    act_cdf[:, -1] = np.inf
    trans_cdf = np.cumsum(model.transitions, axis=2)
    trans_cdf[:, :, -1] = np.inf

    x = np.empty(n_steps, dtype=np.int64)
    a = np.empty(n_steps, dtype=np.int64)
    xn = np.empty(n_steps, dtype=np.int64)
    state = x0
    for t in range(n_steps):
        act = int(np.searchsorted(act_cdf[state], u_act[t], side="right"))
        nxt = int(np.searchsorted(trans_cdf[act, state], u_next[t], side="right"))
        x[t], a[t], xn[t] = state, act, nxt
        state = nxt
    c = np.asarray(model.cost.sample(x, a, xn, rng), dtype=float)
    return Dataset(x, a, xn, c, n_states=model.n_states, n_actions=model.n_actions)


@dataclass(frozen=True)
class CoverageReport:
    counts: np.ndarray
    min_count: int
    flagged: tuple

    @property
    def covered(self) -> bool:
        return not self.flagged


def visit_counts(dataset: Dataset, n_states: int, n_actions: int) -> np.ndarray:
    counts = np.bincount(dataset.x * n_actions + dataset.a, minlength=n_states * n_actions)
    return counts.reshape(n_states, n_actions)


def check_coverage(dataset: Dataset, n_states: int, n_actions: int, min_count: int = 1) -> CoverageReport:
    counts = visit_counts(dataset, n_states, n_actions)
    flagged = tuple((int(i), int(k), int(counts[i, k])) for i, k in zip(*np.nonzero(counts < min_count)))
    return CoverageReport(counts=counts, min_count=min_count, flagged=flagged)


# -- persistence --------------------------------------------------------------------

def save_model(model: MdpModel, path, extra: dict | None = None) -> None:
    payload = model.to_dict()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=1))


def load_model(path) -> MdpModel:
    return MdpModel.from_dict(json.loads(Path(path).read_text()))


DATASET_HEADER = ("t", "x", "a", "x_next", "c")


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_HEADER)
        for tr in dataset:
            w.writerow((tr.t, tr.x, tr.a, tr.x_next, f"{tr.c:.17g}"))


def load_dataset(path, n_states: int | None = None, n_actions: int | None = None) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != DATASET_HEADER:
            raise ValidationError(f"dataset header must be {','.join(DATASET_HEADER)}")
        rows = [r for r in reader if r]
    try:
        t = np.array([int(r[0]) for r in rows], dtype=np.int64)
        x, a, xn = (np.array([int(r[col]) for r in rows], dtype=np.int64) for col in (1, 2, 3))
        c = np.array([float(r[4]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"malformed dataset row: {exc}") from exc
    if n_states is None:
        n_states = int(max(x.max(initial=0), xn.max(initial=0))) + 1
    if n_actions is None:
        n_actions = int(a.max(initial=0)) + 1
    return Dataset(x, a, xn, c, n_states=n_states, n_actions=n_actions, t0=int(t[0]) if len(t) else 1)
