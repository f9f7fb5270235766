import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskdp.errors import ValidationError
from riskdp.risk import (DiscreteDistribution, GCurve, RiskSpec, SpectralMeasure, avar, avar_scan,
                         convex_mixture_risk, curve_from_distribution, kusuoka_risk, load_risk_spec,
                         risk_at_points, risk_from_gcurve, save_risk_spec)

from conftest import random_spec

UNIFORM4 = DiscreteDistribution([0.0, 1.0, 2.0, 3.0], [0.25] * 4)


def distributions(max_atoms=8):
    return st.integers(1, max_atoms).flatmap(lambda n: st.tuples(
        st.lists(st.floats(-5, 5, allow_nan=False), min_size=n, max_size=n),
        st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n),
    )).map(lambda t: DiscreteDistribution(t[0], np.array(t[1]) / np.sum(t[1])))


# -- hand-computed values ---------------------------------------------------------------

@pytest.mark.parametrize("xi, expected", [
    (1.0, 1.5), (0.75, 2.0), (0.5, 2.5), (0.25, 3.0), (0.1, 3.0),
    (0.6, (0.75 + 0.5 + 0.1) / 0.6),      # mass 0.25 at 3, 0.25 at 2, 0.1 at 1
    (0.4, (0.75 + 0.15 * 2) / 0.4),
])
def test_avar_uniform_four_points(xi, expected):
    assert avar(UNIFORM4, xi) == pytest.approx(expected, abs=1e-15)
    assert avar_scan(UNIFORM4, xi) == pytest.approx(expected, abs=1e-14)


def test_section4_risk_of_uniform_four_points(section4_spec):
    m1 = 0.2 * 3.0 + 0.8 * 1.5
    m2 = 2.5
    m3 = (0.1 * 3.0 + 0.5 * 2.625 + 0.6 * 2.25) / 1.2
    m4 = 0.5 * (0.75 + 0.1) / 0.3 + 0.5 * 1.5 / 0.8
    assert kusuoka_risk(UNIFORM4, section4_spec) == pytest.approx(max(m1, m2, m3, m4), abs=1e-14)
    assert kusuoka_risk(UNIFORM4, section4_spec) == pytest.approx(2.5, abs=1e-15)
    # heavier upper tail: the two-level measure (0.3, 0.8) becomes binding
    shifted = DiscreteDistribution([0.0, 1.0, 2.0, 9.0], [0.25] * 4)
    m1 = 0.2 * 9.0 + 0.8 * 3.0
    m2 = (2.25 + 0.5) / 0.5
    m3 = (0.1 * 9.0 + 0.5 * 2.55 / 0.4 + 0.6 * 2.85 / 0.6) / 1.2
    m4 = 0.5 * 2.35 / 0.3 + 0.5 * 3.0 / 0.8
    assert m4 > max(m1, m2, m3)
    assert kusuoka_risk(shifted, section4_spec) == pytest.approx(m4, abs=1e-14)


def test_point_mass_risk_is_the_point(section4_spec):
    assert kusuoka_risk(DiscreteDistribution.point(0.7), section4_spec) == pytest.approx(0.7, abs=1e-15)


def test_section4_requires_explicit_normalisation():
    with pytest.raises(ValidationError, match="measure 2"):
        RiskSpec.section4(normalize=False)
    spec = RiskSpec.section4(normalize=True)
    assert len(spec.notes) == 1 and "1.2" in spec.notes[0]
    assert spec.b == pytest.approx(0.05)
    np.testing.assert_allclose(spec.weight_matrix.sum(axis=1), 1.0, atol=1e-15)


@pytest.mark.parametrize("pairs", [[(0.0, 1.0)], [(1.5, 1.0)], [(0.5, -0.1), (0.6, 1.1)], []])
def test_spectral_measure_validation(pairs):
    with pytest.raises(ValidationError):
        SpectralMeasure.from_pairs(pairs)


def test_distribution_validation():
    with pytest.raises(ValidationError):
        DiscreteDistribution([0.0, 1.0], [0.5, 0.6])
    with pytest.raises(ValidationError):
        DiscreteDistribution([np.inf], [1.0])
    with pytest.raises(ValidationError):
        avar(UNIFORM4, 0.0)


def test_risk_spec_file_roundtrip(tmp_path, section4_spec):
    path = tmp_path / "spec.json"
    save_risk_spec(section4_spec, path)
    again = load_risk_spec(path)
    np.testing.assert_array_equal(again.weight_matrix, section4_spec.weight_matrix)
    np.testing.assert_array_equal(again.xis, section4_spec.xis)


def test_risk_spec_file_with_bad_weights(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps([[[0.5, 0.7]]]))
    with pytest.raises(ValidationError):
        load_risk_spec(path)
    assert load_risk_spec(path, normalize=True).notes
    path.write_text("{}")
    with pytest.raises(ValidationError):
        load_risk_spec(path)


# -- properties -------------------------------------------------------------------------

@given(distributions(), st.floats(0.01, 1.0))
def test_avar_sort_rule_matches_scan(dist, xi):
    assert avar(dist, xi) == pytest.approx(avar_scan(dist, xi), abs=1e-10)


@given(distributions(), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_avar_monotone_in_level(dist, a, b):
    lo, hi = sorted((a, b))
    assert avar(dist, lo) >= avar(dist, hi) - 1e-12
    assert dist.values.max() + 1e-12 >= avar(dist, lo)
    assert avar(dist, 1.0) == pytest.approx(dist.mean(), abs=1e-12)


@given(distributions(), st.floats(-3, 3), st.floats(0.1, 5), st.integers(0, 2**31))
def test_kusuoka_translation_and_homogeneity(dist, shift, scale, seed):
    spec = random_spec(np.random.default_rng(seed))
    base = kusuoka_risk(dist, spec)
    moved = DiscreteDistribution(dist.values + shift, dist.probs)
    scaled = DiscreteDistribution(dist.values * scale, dist.probs)
    assert kusuoka_risk(moved, spec) == pytest.approx(base + shift, abs=1e-10)
    assert kusuoka_risk(scaled, spec) == pytest.approx(base * scale, abs=1e-9)
    assert dist.mean() - 1e-12 <= base <= dist.values.max() + 1e-12


@given(distributions(), st.integers(0, 2**31))
def test_kusuoka_equals_gcurve_route(dist, seed):
    spec = random_spec(np.random.default_rng(seed))
    curve = curve_from_distribution(dist)
    lo, hi = dist.values.min() - 1.0, dist.values.max() + 1.0
    assert risk_from_gcurve(curve, spec, lo, hi) == pytest.approx(kusuoka_risk(dist, spec), abs=1e-10)


@given(distributions())
def test_gcurve_of_a_law_is_admissible(dist):
    curve = curve_from_distribution(dist)
    assert curve.is_admissible()
    q = np.linspace(dist.values.min() - 2, dist.values.max() + 2, 57)
    np.testing.assert_allclose(curve(q), dist.partial_expectation(q), atol=1e-12)
    assert np.all(curve.slopes() >= -1 - 1e-12) and np.all(curve.slopes() <= 1e-12)


@given(st.integers(0, 2**31))
@settings(max_examples=50)
def test_convex_mixture_bisection_matches_full_scan(seed):
    rng = np.random.default_rng(seed)
    K, n_atoms = int(rng.integers(1, 5)), int(rng.integers(1, 7))
    spec = random_spec(rng)
    z = rng.uniform(0, 3, size=(K, n_atoms))
    p = rng.dirichlet(np.ones(n_atoms), size=K)
    q = np.unique(np.concatenate(([0.0], z.ravel(), [4.0])))
    G = np.array([np.maximum(z[k][None, :] - q[:, None], 0) @ p[k] for k in range(K)])
    S = np.array([(z[k][None, :] > q[:, None]) @ p[k] for k in range(K)])
    lams = rng.dirichlet(np.ones(K), size=20)
    fast = convex_mixture_risk(q, G, S, lams, spec)
    full = risk_at_points(q, lams @ G, spec)
    np.testing.assert_allclose(fast, full, atol=1e-12)


def test_gcurve_validation_and_extrapolation():
    with pytest.raises(ValidationError):
        GCurve([1.0, 0.5], [0.0, 0.0])
    with pytest.raises(ValidationError):
        GCurve([0.0], [0.0], left_slope=1.0)
    c = GCurve([1.0, 2.0], [0.5, 0.0])
    assert c(0.0) == pytest.approx(1.5) and c(3.0) == 0.0
    assert GCurve([0.0, 1.0], [0.0, 0.2]).violations() == ["increasing"]
    assert GCurve([0.0, 1.0], [2.0, 0.0]).violations() == ["slope below -1"]
