"""AVaR and Kusuoka-mixture risk on discrete laws and on partial-expectation curves.

The partial-expectation curve of a law Z is ``g(q) = E[(Z - q)_+]``. For a
finite mixing set of spectral measures the risk is

    max_mu  sum_atoms  w * min_q { q + g(q) / xi }

and, for piecewise-linear ``g``, every inner minimum sits at a breakpoint or at
an end of the admissible q interval.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

WEIGHT_TOL = 1e-9
PROB_TOL = 1e-12
LIPSCHITZ_TOL = 1e-12

# Mixing set of the four-state study; the third measure's weights sum to 1.2.
SECTION4_MEASURES = (
    ((0.2, 0.2), (1.0, 0.8)),
    ((0.5, 1.0),),
    ((0.05, 0.1), (0.4, 0.5), (0.6, 0.6)),
    ((0.3, 0.5), (0.8, 0.5)),
)


@dataclass(frozen=True, eq=False)
class SpectralMeasure:
    """Discrete probability measure on (0, 1] given as ``(xi, weight)`` atoms."""

    xi: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        xi = np.array(self.xi, dtype=float).ravel()
        w = np.array(self.weights, dtype=float).ravel()
        if xi.size == 0 or xi.shape != w.shape:
            raise ValidationError("a spectral measure needs matching, non-empty xi/weight lists")
        if np.any(xi <= 0) or np.any(xi > 1):
            raise ValidationError(f"atoms must lie in (0, 1], got {xi.tolist()}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValidationError(f"weights must be non-negative and sum to 1, got sum {w.sum():.12g}")
        xi.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]]) -> "SpectralMeasure":
        pairs = list(pairs)
        return cls([p[0] for p in pairs], [p[1] for p in pairs])

    @classmethod
    def dirac(cls, xi: float) -> "SpectralMeasure":
        return cls([xi], [1.0])

    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.xi.tolist(), self.weights.tolist()))


@dataclass(frozen=True, eq=False)
class RiskSpec:
    """Finite mixing set of spectral measures plus ``b``, the smallest atom location."""

    measures: tuple
    notes: tuple = field(default=())

    def __post_init__(self):
        measures = tuple(self.measures)
        if not measures:
            raise ValidationError("risk spec needs at least one measure")
        object.__setattr__(self, "measures", measures)
        xis = np.unique(np.concatenate([m.xi for m in measures]))
        # weight matrix over the shared, sorted atom locations: W[measure, atom]
        W = np.zeros((len(measures), len(xis)))
        for r, m in enumerate(measures):
            np.add.at(W[r], np.searchsorted(xis, m.xi), m.weights)
        xis.setflags(write=False)
        W.setflags(write=False)
        object.__setattr__(self, "xis", xis)
        object.__setattr__(self, "weight_matrix", W)

    @property
    def b(self) -> float:
        return float(self.xis[0])

    @classmethod
    def from_pairs(cls, measures, normalize: bool = False) -> "RiskSpec":
        """Build from nested ``[[(xi, w), ...], ...]``; ``normalize`` rescales weights that do not sum to 1."""
        out, notes = [], []
        for idx, pairs in enumerate(measures):
            pairs = [tuple(p) if not isinstance(p, dict) else (p["xi"], p["weight"]) for p in pairs]
            total = sum(w for _, w in pairs)
            if abs(total - 1.0) > WEIGHT_TOL:
                if not normalize:
                    raise ValidationError(
                        f"measure {idx} {pairs} has weights summing to {total:.12g}, not 1; "
                        "pass normalize to rescale it")
                notes.append(f"measure {idx} weights divided by {total:.12g}")
                pairs = [(xi, w / total) for xi, w in pairs]
            try:
                out.append(SpectralMeasure.from_pairs(pairs))
            except ValidationError as exc:
                raise ValidationError(f"measure {idx}: {exc}") from exc
        return cls(tuple(out), notes=tuple(notes))

    @classmethod
    def section4(cls, normalize: bool = True) -> "RiskSpec":
        return cls.from_pairs(SECTION4_MEASURES, normalize=normalize)

    def to_list(self) -> list:
        return [[{"xi": xi, "weight": w} for xi, w in m.pairs()] for m in self.measures]


def load_risk_spec(path, normalize: bool = False) -> RiskSpec:
    """Load a JSON list of measures; the name ``section4`` selects the built-in four-measure set."""
    if str(path) == "section4":
        return RiskSpec.from_pairs(SECTION4_MEASURES, normalize=normalize)
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read risk spec {path}: {exc}") from exc
    if not isinstance(data, list):
        raise ValidationError("risk spec file must hold a JSON list of measures")
    return RiskSpec.from_pairs(data, normalize=normalize)


def save_risk_spec(spec: RiskSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_list(), indent=1))


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        z = np.array(self.values, dtype=float).ravel()
        p = np.array(self.probs, dtype=float).ravel()
        if z.size == 0 or z.shape != p.shape:
            raise ValidationError("distribution needs matching, non-empty values/probs")
        if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL * max(1, z.size):
            raise ValidationError(f"probabilities must be non-negative and sum to 1 (sum {p.sum():.15g})")
        if not np.all(np.isfinite(z)):
            raise ValidationError("values must be finite")
        object.__setattr__(self, "values", z)
        object.__setattr__(self, "probs", p)

    @classmethod
    def point(cls, value: float) -> "DiscreteDistribution":
        return cls([value], [1.0])

    def mean(self) -> float:
        return float(self.values @ self.probs)

    def partial_expectation(self, q):
        """E[(Z - q)_+] evaluated by direct summation."""
        q = np.asarray(q, dtype=float)
        return np.maximum(self.values - q[..., None], 0.0) @ self.probs


def _check_xi(xi: float) -> None:
    if not (0.0 < xi <= 1.0):
        raise ValidationError(f"AVaR level must lie in (0, 1], got {xi}")


def avar(dist: DiscreteDistribution, xi: float) -> float:
    """Mean of the worst ``xi`` fraction: sort descending, take mass ``xi``, split the last atom."""
    _check_xi(xi)
    order = np.argsort(-dist.values, kind="stable")
    z, p = dist.values[order], dist.probs[order]
    before = np.concatenate(([0.0], np.cumsum(p)[:-1]))
    take = np.clip(xi - before, 0.0, p)
    return float(take @ z / xi)


def avar_scan(dist: DiscreteDistribution, xi: float) -> float:
    """``min_q q + E[(Z - q)_+] / xi`` scanned over the atom locations."""
    _check_xi(xi)
    q = np.unique(dist.values)
    return float(np.min(q + dist.partial_expectation(q) / xi))


def kusuoka_risk(dist: DiscreteDistribution, spec: RiskSpec) -> float:
    if not spec.measures:
        raise ValidationError("empty mixing set")
    per_xi = np.array([avar(dist, xi) for xi in spec.xis])
    return float(np.max(spec.weight_matrix @ per_xi))


def risk_at_points(q: np.ndarray, g: np.ndarray, spec: RiskSpec, chunk: int = 512) -> np.ndarray:
    """Kusuoka risk from curve values on a shared candidate set of q.

    ``g`` has shape ``[..., B]`` with ``g[..., b]`` the curve value at ``q[b]``.
    Exact for piecewise-linear curves whenever ``q`` contains every breakpoint in
    the interval plus both interval ends.
    """
    q = np.asarray(q, dtype=float)
    g = np.asarray(g, dtype=float)
    lead = g.shape[:-1]
    flat = g.reshape(-1, g.shape[-1])
    inv = 1.0 / spec.xis
    inner = np.empty((flat.shape[0], len(inv)))
    for s in range(0, flat.shape[0], chunk):
        block = flat[s:s + chunk]
        for a, c in enumerate(inv):
            inner[s:s + chunk, a] = np.min(q + block * c, axis=1)
    return np.max(inner @ spec.weight_matrix.T, axis=1).reshape(lead)


def convex_mixture_risk(q: np.ndarray, G: np.ndarray, S: np.ndarray, lams: np.ndarray,
                        spec: RiskSpec) -> np.ndarray:
    """Kusuoka risk of the mixtures ``lams @ G`` of convex curves, by bisection.

    ``G[k, b]`` are curve values at ``q[b]`` and ``S[k, b]`` the matching
    right-hand survival ``-g_k'(q_b+)``. For a convex curve the minimiser of
    ``q + g(q)/xi`` is the first breakpoint whose mixed survival is ``<= xi``,
    found in ``O(log B)`` gathers per weight vector instead of a full scan.
    """
    lams = np.atleast_2d(np.asarray(lams, dtype=float))
    L, B = lams.shape[0], len(q)
    xis = spec.xis
    lo = np.zeros((L, len(xis)), dtype=np.int64)
    hi = np.full((L, len(xis)), B - 1, dtype=np.int64)
    while True:
        open_ = lo < hi
        if not open_.any():
            break
        mid = (lo + hi) // 2
        surv = np.einsum("lk,kln->ln", lams, S[:, mid])
        ok = surv <= xis
        hi = np.where(open_ & ok, mid, hi)
        lo = np.where(open_ & ~ok, mid + 1, lo)
    best = np.full(lo.shape, np.inf)
    for shift in (-1, 0):
        idx = np.clip(lo + shift, 0, B - 1)
        val = q[idx] + np.einsum("lk,kln->ln", lams, G[:, idx]) / xis
        best = np.minimum(best, val)
    return np.max(best @ spec.weight_matrix.T, axis=1)


@dataclass(frozen=True, eq=False)
class GCurve:
    """Piecewise-linear non-increasing curve ``q -> g(q)``.

    Linear between ``breakpoints``; to the left of the first breakpoint the curve
    continues with ``left_slope`` (``-1`` for curves of a law, where
    ``g(q) = E[Z] - q``; ``0`` for tabulated approximations); to the right it is
    constant at the last value (zero for curves of a law).
    """

    breakpoints: np.ndarray
    values: np.ndarray
    left_slope: float = -1.0

    def __post_init__(self):
        bp = np.array(self.breakpoints, dtype=float).ravel()
        v = np.array(self.values, dtype=float).ravel()
        if bp.size == 0 or bp.shape != v.shape:
            raise ValidationError("curve needs matching, non-empty breakpoints/values")
        if np.any(np.diff(bp) <= 0):
            raise ValidationError("breakpoints must be strictly increasing")
        if not (-1.0 <= self.left_slope <= 0.0):
            raise ValidationError("left slope must lie in [-1, 0]")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", v)

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        out = np.interp(q, self.breakpoints, self.values)
        left = q < self.breakpoints[0]
        return np.where(left, self.values[0] + self.left_slope * (q - self.breakpoints[0]), out)

    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.breakpoints)

    def violations(self, tol: float = LIPSCHITZ_TOL) -> list[str]:
        """Names of the broken shape properties (empty list if the curve is admissible)."""
        out = []
        if np.any(self.values < -tol):
            out.append("negative")
        dv, dq = np.diff(self.values), np.diff(self.breakpoints)
        if np.any(dv > 0):
            out.append("increasing")
        if np.any(-dv > dq + tol):
            out.append("slope below -1")
        return out

    def is_admissible(self, tol: float = LIPSCHITZ_TOL) -> bool:
        return not self.violations(tol)


def curve_from_distribution(dist: DiscreteDistribution) -> GCurve:
    bp = np.unique(dist.values[dist.probs > 0])
    return GCurve(bp, dist.partial_expectation(bp), left_slope=-1.0)


def risk_from_gcurve(curve: GCurve, spec: RiskSpec, q_lo: float, q_hi: float) -> float:
    """``max_mu sum w * min_{q in [q_lo, q_hi]} {q + g(q)/xi}``, exact for piecewise-linear curves."""
    if not q_lo < q_hi:
        raise ValidationError(f"need q_lo < q_hi, got [{q_lo}, {q_hi}]")
    if not isinstance(curve, GCurve):
        raise ValidationError("expected a GCurve")
    bp = curve.breakpoints
    q = np.concatenate(([q_lo], bp[(bp > q_lo) & (bp < q_hi)], [q_hi]))
    return float(risk_at_points(q, curve(q)[None, :], spec)[0])
