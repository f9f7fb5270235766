"""Surrogates f(i, k, q) for the per-action partial-expectation curves, and their fitting.

Two backends: a table on the q-grid (the exact least-squares fit, followed by
an isotonic projection) and a small numpy MLP trained by minibatch stochastic
gradient steps with a monotonicity penalty.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression

from ..errors import DivergenceError, ValidationError
from ..mdp import Dataset, make_rng
from ..risk import GCurve


@dataclass(frozen=True, eq=False)
class QGrid:
    points: np.ndarray

    def __post_init__(self):
        p = np.array(self.points, dtype=float).ravel()
        if p.size < 2 or np.any(np.diff(p) <= 0) or p[0] < 0:
            raise ValidationError("q-grid needs at least two strictly increasing non-negative points")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    @classmethod
    def uniform(cls, m_grid: int, q_max: float) -> "QGrid":
        return cls(np.linspace(0.0, q_max, m_grid))

    @property
    def q_max(self) -> float:
        return float(self.points[-1])

    @property
    def spacing(self) -> float:
        return float(np.max(np.diff(self.points)))

    def __len__(self) -> int:
        return len(self.points)


def hinge_targets(dataset: Dataset, v_hat, gamma: float, grid: QGrid) -> np.ndarray:
    """``(c_t + gamma v(x_{t+1}) - q_m)_+`` for every transition and grid point, shape ``[t, m]``."""
    y = dataset.c + gamma * np.asarray(v_hat)[dataset.x_next]
    return np.maximum(y[:, None] - grid.points[None, :], 0.0)


def cell_statistics(dataset: Dataset, v_hat, gamma: float, grid: QGrid, chunk: int = 20000):
    """Per-(i, k) count, sum and sum of squares of the hinge targets on the grid."""
    n, K, m = dataset.n_states, dataset.n_actions, len(grid)
    pair = dataset.x * K + dataset.a
    counts = np.bincount(pair, minlength=n * K).astype(float)
    s1 = np.zeros((n * K, m))
    s2 = np.zeros((n * K, m))
    y = dataset.c + gamma * np.asarray(v_hat)[dataset.x_next]
    order = np.argsort(pair, kind="stable")
    bounds = np.searchsorted(pair[order], np.arange(n * K + 1))
    for p in range(n * K):
        rows = order[bounds[p]:bounds[p + 1]]
        for s in range(0, len(rows), chunk):
            h = np.maximum(y[rows[s:s + chunk], None] - grid.points[None, :], 0.0)
            s1[p] += h.sum(axis=0)
            s2[p] += (h * h).sum(axis=0)
    return counts.reshape(n, K), s1.reshape(n, K, m), s2.reshape(n, K, m)


def empirical_loss(values: np.ndarray, counts, s1, s2) -> float:
    """``sum_t sum_m (f(x_t, a_t, q_m) - target)^2`` from cell statistics."""
    return float(np.sum(counts[:, :, None] * values ** 2 - 2 * values * s1 + s2))


class GApproximator:
    """Common surface: ``evaluate(i, k, q)`` and grid tabulation ``grid_values() -> [i, k, m]``."""

    grid: QGrid
    backend: str

    def grid_values(self) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, i, k, q):
        raise NotImplementedError

    def curve(self, i: int, k: int) -> GCurve:
        return GCurve(self.grid.points, self.grid_values()[i, k], left_slope=0.0)


@dataclass(eq=False)
class TableApproximator(GApproximator):
    """Grid table, linear in q between grid points and constant beyond the ends."""

    values: np.ndarray
    grid: QGrid
    raw: np.ndarray | None = None
    fallback: tuple = ()
    fit_loss: float = float("nan")
    backend: str = field(default="table", init=False)

    def grid_values(self) -> np.ndarray:
        return self.values

    def evaluate(self, i, k, q):
        return np.interp(q, self.grid.points, self.values[i, k])

    def to_dict(self) -> dict:
        return {"backend": "table", "grid": self.grid.points.tolist(), "values": self.values.tolist(),
                "fallback": [list(p) for p in self.fallback], "fit_loss": self.fit_loss}


def fit_g_table(dataset: Dataset, v_hat, grid: QGrid, gamma: float, c_max: float,
                project: bool = True) -> TableApproximator:
    """Cellwise least-squares fit: the mean hinge target per (i, k, q_m).

    Pairs without data fall back to a uniform next-state row with the
    worst-case cost ``c_max``. With ``project`` each (i, k) row is replaced by
    its closest non-increasing sequence.
    """
    if len(dataset) == 0:
        raise ValidationError("cannot fit on an empty dataset")
    v_hat = np.asarray(v_hat, dtype=float)
    counts, s1, s2 = cell_statistics(dataset, v_hat, gamma, grid)
    with np.errstate(invalid="ignore", divide="ignore"):
        raw = s1 / counts[:, :, None]
    fallback = tuple((int(i), int(k)) for i, k in zip(*np.nonzero(counts == 0)))
    if fallback:
        pessimistic = np.maximum(c_max + gamma * v_hat[:, None] - grid.points[None, :], 0.0).mean(axis=0)
        for i, k in fallback:
            raw[i, k] = pessimistic
    values = raw.copy()
    if project:
        for i in range(values.shape[0]):
            for k in range(values.shape[1]):
                values[i, k] = isotonic_regression(raw[i, k], increasing=False).x
    loss = empirical_loss(values, counts, s1, s2) / (len(dataset) * len(grid))
    return TableApproximator(values=values, grid=grid, raw=raw, fallback=fallback, fit_loss=loss)


# -- MLP backend -------------------------------------------------------------------------

ACTIVATIONS = {
    "elu": (lambda z: np.where(z > 0, z, np.expm1(np.minimum(z, 0.0))),
            lambda z, a: np.where(z > 0, 1.0, a + 1.0)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
}


@dataclass(frozen=True)
class MlpHyper:
    hidden: tuple = (64, 64)
    activation: str = "elu"
    epochs: int = 50
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta: float = 1.0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0 or self.beta < 0:
            raise ValidationError("invalid MLP hyperparameters")
        object.__setattr__(self, "hidden", tuple(self.hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass(eq=False)
class MlpApproximator(GApproximator):
    """``f(i, k, q)`` as an MLP on one-hot(state) + one-hot(action) + q / q_max."""

    weights: list
    biases: list
    activation: str
    n_states: int
    n_actions: int
    grid: QGrid
    fit_loss: float = float("nan")
    penalty: float = float("nan")
    backend: str = field(default="mlp", init=False)

    @classmethod
    def init(cls, n_states: int, n_actions: int, grid: QGrid, hyper: MlpHyper, rng) -> "MlpApproximator":
        sizes = [n_states + n_actions + 1, *hyper.hidden, 1]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, hyper.activation, n_states, n_actions, grid)

    @property
    def layer_sizes(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MlpApproximator":
        return MlpApproximator([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                               self.activation, self.n_states, self.n_actions, self.grid)

    def encode(self, i, k, q) -> np.ndarray:
        i, k, q = np.broadcast_arrays(np.asarray(i), np.asarray(k), np.asarray(q, dtype=float))
        X = np.zeros((i.size, self.n_states + self.n_actions + 1))
        rows = np.arange(i.size)
        X[rows, i.ravel()] = 1.0
        X[rows, self.n_states + k.ravel()] = 1.0
        X[:, -1] = q.ravel() / self.grid.q_max
        return X

    def forward(self, X):
        act, _ = ACTIVATIONS[self.activation]
        cache = [X]
        h = X
        for layer, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = z if layer == len(self.weights) - 1 else act(z)
            cache.append((z, h))
        return h[:, 0], cache

    def backward(self, cache, dout):
        """Gradients of ``sum(dout * f)`` w.r.t. weights, biases and inputs."""
        _, dact = ACTIVATIONS[self.activation]
        grad_w, grad_b = [None] * len(self.weights), [None] * len(self.weights)
        delta = dout[:, None]
        for layer in range(len(self.weights) - 1, -1, -1):
            h_prev = cache[layer] if layer == 0 else cache[layer][1]
            grad_w[layer] = h_prev.T @ delta
            grad_b[layer] = delta.sum(axis=0)
            delta = delta @ self.weights[layer].T
            if layer > 0:
                z, a = cache[layer]
                delta = delta * dact(z, a)
        return grad_w, grad_b, delta

    def evaluate(self, i, k, q):
        q = np.asarray(q, dtype=float)
        out, _ = self.forward(self.encode(i, k, q))
        return out.reshape(np.broadcast(np.asarray(i), np.asarray(k), q).shape)

    def dq(self, i, k, q) -> np.ndarray:
        """Partial derivative of f in q."""
        q = np.asarray(q, dtype=float)
        out, cache = self.forward(self.encode(i, k, q))
        _, _, dX = self.backward(cache, np.ones_like(out))
        return (dX[:, -1] / self.grid.q_max).reshape(np.broadcast(np.asarray(i), np.asarray(k), q).shape)

    def grid_inputs(self) -> np.ndarray:
        n, K, m = self.n_states, self.n_actions, len(self.grid)
        i, k, qm = np.meshgrid(np.arange(n), np.arange(K), np.arange(m), indexing="ij")
        return self.encode(i.ravel(), k.ravel(), self.grid.points[qm.ravel()])

    def grid_values(self) -> np.ndarray:
        out, _ = self.forward(self.grid_inputs())
        return out.reshape(self.n_states, self.n_actions, len(self.grid))

    def monotonicity_penalty(self) -> float:
        """Sum over (i, k, m) of the positive part of f(q_{m+1}) - f(q_m)."""
        F = self.grid_values()
        return float(np.maximum(np.diff(F, axis=2), 0.0).sum())

    def flat_weights(self) -> list:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)]).tolist()

    def to_dict(self) -> dict:
        return {"backend": "mlp", "grid": self.grid.points.tolist(), "layer_sizes": self.layer_sizes,
                "activation": self.activation, "n_states": self.n_states, "n_actions": self.n_actions,
                "weights": self.flat_weights(), "fit_loss": self.fit_loss, "penalty": self.penalty}

    @classmethod
    def from_flat(cls, d: dict) -> "MlpApproximator":
        flat = np.asarray(d["weights"], dtype=float)
        sizes = d["layer_sizes"]
        weights, biases, pos = [], [], 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out))
            pos += fan_in * fan_out
            biases.append(flat[pos:pos + fan_out].copy())
            pos += fan_out
        return cls(weights, biases, d["activation"], d["n_states"], d["n_actions"], QGrid(d["grid"]),
                   fit_loss=d.get("fit_loss", float("nan")), penalty=d.get("penalty", float("nan")))


def approximator_from_dict(d: dict) -> GApproximator:
    if d["backend"] == "table":
        return TableApproximator(values=np.asarray(d["values"], dtype=float), grid=QGrid(d["grid"]),
                                 fallback=tuple(tuple(p) for p in d.get("fallback", [])),
                                 fit_loss=d.get("fit_loss", float("nan")))
    if d["backend"] == "mlp":
        return MlpApproximator.from_flat(d)
    raise ValidationError(f"unknown backend {d['backend']!r}")


def _penalty_grad(F: np.ndarray) -> np.ndarray:
    up = (np.diff(F, axis=2) > 0).astype(float)
    g = np.zeros_like(F)
    g[:, :, 1:] += up
    g[:, :, :-1] -= up
    return g


def fit_g_mlp(dataset: Dataset, v_hat, grid: QGrid, gamma: float, hyper: MlpHyper | None = None,
              seed: int = 0, init: MlpApproximator | None = None) -> MlpApproximator:
    """Minibatch training of the penalised least-squares objective.

    The objective is the squared hinge-target error summed over transitions
    and grid points plus ``beta`` times the monotonicity penalty, divided by
    the number of data cells ``t * m`` (a constant rescaling). Each step uses
    ``batch_size`` transitions at every grid point and the full-grid penalty.
    """
    hyper = hyper or MlpHyper()
    if len(dataset) == 0:
        raise ValidationError("cannot fit on an empty dataset")
    rng = make_rng(seed)
    net = init.copy() if init is not None else MlpApproximator.init(
        dataset.n_states, dataset.n_actions, grid, hyper, rng)
    n_cells = len(dataset) * len(grid)
    y = dataset.c + gamma * np.asarray(v_hat, dtype=float)[dataset.x_next]
    X_grid = net.grid_inputs()
    m = len(grid)
    params = net.weights + net.biases
    mom = [np.zeros_like(p) for p in params]
    vel = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    for epoch in range(hyper.epochs):
        perm = rng.permutation(len(dataset))
        for s in range(0, len(perm), hyper.batch_size):
            idx = perm[s:s + hyper.batch_size]
            rows = len(idx)
            Xb = net.encode(np.repeat(dataset.x[idx], m), np.repeat(dataset.a[idx], m), np.tile(grid.points, rows))
            target = np.maximum(np.repeat(y[idx], m) - np.tile(grid.points, rows), 0.0)
            out, cache = net.forward(np.vstack((Xb, X_grid)))
            fb, F = out[:rows * m], out[rows * m:].reshape(net.n_states, net.n_actions, m)
            err = fb - target
            if not np.all(np.isfinite(out)):
                raise DivergenceError("non-finite network output", step)
            dout = np.concatenate((2.0 * err / (rows * m), hyper.beta / n_cells * _penalty_grad(F).ravel()))
            gw, gb, _ = net.backward(cache, dout)
            step += 1
            for p, g, mo, ve in zip(params, gw + gb, mom, vel):
                if hyper.optimizer == "sgd":
                    p -= hyper.learning_rate * g
                else:
                    mo *= b1
                    mo += (1 - b1) * g
                    ve *= b2
                    ve += (1 - b2) * g * g
                    p -= hyper.learning_rate * (mo / (1 - b1 ** step)) / (np.sqrt(ve / (1 - b2 ** step)) + eps)
    counts, s1, s2 = cell_statistics(dataset, v_hat, gamma, grid)
    F = net.grid_values()
    net.penalty = float(np.maximum(np.diff(F, axis=2), 0.0).sum())
    net.fit_loss = (empirical_loss(F, counts, s1, s2) + hyper.beta * net.penalty) / n_cells
    if not np.isfinite(net.fit_loss):
        raise DivergenceError("non-finite training loss", step)
    return net
