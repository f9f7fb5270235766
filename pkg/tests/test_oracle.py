import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskdp.errors import ConvergenceError, ValidationError
from riskdp.mdp import CostModel, MdpModel, SimplexPolicy, gen_random_mdp
from riskdp.oracle import (OracleSolution, action_curves, bellman_apply, brute_force_policy_eval_sweep, exact_g,
                           horizon_for, iteration_bound, nested_risk_eval, policy_apply, value_iteration)
from riskdp.risk import DiscreteDistribution, RiskSpec, kusuoka_risk
from riskdp.simplex import SimplexSearch, lattice, project_simplex

from conftest import random_spec, scalar_model


def fixture_model(case) -> MdpModel:
    return MdpModel(case["transitions"], CostModel("deterministic", 1.0, table=case["costs"]), case["gamma"])


# -- independent enumeration fixture ----------------------------------------------------

def test_vertex_values_match_enumeration(oracle_cases):
    spec = RiskSpec.from_pairs(oracle_cases["measures"])
    for case in oracle_cases["cases"]:
        sol = value_iteration(fixture_model(case), spec, tol=1e-13, search=SimplexSearch.vertices())
        np.testing.assert_allclose(sol.v_star, case["v_vertex"], rtol=0, atol=1e-12)
        np.testing.assert_array_equal(sol.pi_star.weights, case["pi_vertex"])


def test_dense_search_matches_fine_enumeration(oracle_cases):
    spec = RiskSpec.from_pairs(oracle_cases["measures"])
    interior = 0
    for case in oracle_cases["cases"]:
        sol = value_iteration(fixture_model(case), spec, tol=1e-13)
        ref = np.array(case["v_dense"])
        # the refined search is at least as good as the 0.005 lattice and no more than 1e-4 better
        assert np.all(sol.v_star <= ref + 1e-12)
        assert np.all(ref - sol.v_star <= 1e-4)
        np.testing.assert_allclose(sol.pi_star.weights, case["pi_dense"], atol=0.01)
        interior += np.any(np.array(case["v_vertex"]) - ref > 1e-4)
    assert interior >= 3


def test_randomised_policy_can_strictly_win(oracle_cases):
    spec = RiskSpec.from_pairs(oracle_cases["measures"])
    case = oracle_cases["cases"][4]
    report = brute_force_policy_eval_sweep(fixture_model(case), spec, tol=1e-12)
    lattice_gain = case["v_vertex"][0] - case["v_dense"][0]
    assert lattice_gain > 9e-4
    assert lattice_gain - 1e-12 <= report.interior_gain[0] <= lattice_gain + 1e-4
    assert report.interior_wins().tolist() == [True, False]
    assert np.all(report.interior_gain >= -1e-12)


# -- closed forms ---------------------------------------------------------------------

def test_scalar_fixed_point(section4_spec):
    sol = value_iteration(scalar_model(), section4_spec, tol=1e-13)
    assert sol.v_star[0] == pytest.approx(5 / 7, abs=1e-12)
    assert sol.iterations <= iteration_bound(1e-13, 0.3, 1.0) + 1


def test_two_point_law_closed_form():
    # one state, one action, cost 0 or 1 with equal probability through two copies of the state
    spec = RiskSpec.from_pairs([[(0.5, 1.0)]])
    m = MdpModel([[[0.5, 0.5], [0.5, 0.5]]], CostModel("deterministic", 1.0, table=[[[0.0, 1.0]], [[0.0, 1.0]]]), 0.5)
    sol = value_iteration(m, spec, tol=1e-13)
    # AVaR_0.5 of {v, 1+v} is 1 + v, so v = 1 + 0.5 v
    np.testing.assert_allclose(sol.v_star, [2.0, 2.0], atol=1e-12)


def test_exact_g_matches_the_mixture_law():
    m = gen_random_mdp(3, 2, seed=4)
    v = np.array([0.3, 0.1, 0.9])
    lam = np.array([0.25, 0.75])
    curve = exact_g(m, v, 1, lam)
    z = (m.cost.table[1] + m.gamma * v[None, :]).ravel()
    p = (lam[:, None] * m.transitions[:, 1, :]).ravel()
    q = np.linspace(-1, 2, 31)
    np.testing.assert_allclose(curve(q), DiscreteDistribution(z, p).partial_expectation(q), atol=1e-12)
    with pytest.raises(ValidationError):
        exact_g(m, v, 1, [0.5, 0.6])


def test_policy_apply_is_the_mixture_risk(section4_spec):
    m = gen_random_mdp(3, 3, seed=8)
    v = np.array([0.2, 0.5, 0.1])
    pol = SimplexPolicy([[0.2, 0.3, 0.5], [1, 0, 0], [0.1, 0.1, 0.8]])
    out = policy_apply(m, section4_spec, v, pol)
    for i in range(3):
        z = (m.cost.table[i] + m.gamma * v[None, :]).ravel()
        p = (pol[i][:, None] * m.transitions[:, i, :]).ravel()
        assert out[i] == pytest.approx(kusuoka_risk(DiscreteDistribution(z, p), section4_spec), abs=1e-12)
    sv, _ = bellman_apply(m, section4_spec, v)
    assert np.all(sv <= out + 1e-12)


def test_action_curves_cover_the_value_range():
    m = gen_random_mdp(2, 2, seed=1)
    q, G, S = action_curves(m, np.zeros(2), 0)
    assert q[0] <= 0 and q[-1] >= m.v_max
    assert np.all(np.diff(G, axis=1) <= 1e-15) and np.all(S[:, -1] == 0)


# -- properties ---------------------------------------------------------------------------

models = st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32), st.floats(0.05, 0.95))


@given(models, st.integers(0, 2**32))
@settings(max_examples=60)
def test_contraction_with_vertex_candidates(params, seed):
    n, k, mseed, gamma = params
    rng = np.random.default_rng(seed)
    m = gen_random_mdp(n, k, seed=mseed, gamma=gamma)
    spec = random_spec(rng)
    v, w = rng.uniform(0, m.v_max, size=(2, n))
    search = SimplexSearch.vertices()
    sv, _ = bellman_apply(m, spec, v, search)
    sw, _ = bellman_apply(m, spec, w, search)
    assert np.max(np.abs(sv - sw)) <= gamma * np.max(np.abs(v - w)) + 1e-12


@given(models, st.integers(0, 2**32))
@settings(max_examples=15)
def test_contraction_with_dense_search_up_to_refinement_gain(params, seed):
    n, k, mseed, gamma = params
    rng = np.random.default_rng(seed)
    m = gen_random_mdp(n, k, seed=mseed, gamma=gamma)
    spec = random_spec(rng)
    v, w = rng.uniform(0, m.v_max, size=(2, n))
    search = SimplexSearch(n_random=200)
    sv, _, dv = bellman_apply(m, spec, v, search, details=True)
    sw, _, dw = bellman_apply(m, spec, w, search, details=True)
    slack = max(dv["gain"].max(), dw["gain"].max())
    assert np.max(np.abs(sv - sw)) <= gamma * np.max(np.abs(v - w)) + slack + 1e-12


@given(models, st.integers(0, 2**32), st.floats(0, 2))
@settings(max_examples=30)
def test_operator_is_monotone_and_translation_equivariant(params, seed, shift):
    n, k, mseed, gamma = params
    rng = np.random.default_rng(seed)
    m = gen_random_mdp(n, k, seed=mseed, gamma=gamma)
    spec = random_spec(rng)
    v = rng.uniform(0, 1, size=n)
    bump = v + rng.uniform(0, 1, size=n)
    search = SimplexSearch.vertices()
    sv, _ = bellman_apply(m, spec, v, search)
    assert np.all(bellman_apply(m, spec, bump, search)[0] >= sv - 1e-12)
    np.testing.assert_allclose(bellman_apply(m, spec, v + shift, search)[0], sv + gamma * shift, atol=1e-12)


@given(st.integers(0, 2**32))
@settings(max_examples=10)
def test_nested_risk_converges_to_the_fixed_point(seed):
    m = gen_random_mdp(3, 2, seed=seed)
    spec = RiskSpec.section4()
    sol = value_iteration(m, spec, tol=1e-12)
    for T in (5, 10, 20):
        w = nested_risk_eval(m, spec, sol.pi_star, T)
        assert np.max(np.abs(w - sol.v_star)) <= m.gamma ** T * m.v_max + 1e-10


# -- errors and persistence -----------------------------------------------------------------

def test_value_iteration_reports_non_convergence(section4_spec):
    with pytest.raises(ConvergenceError) as err:
        value_iteration(gen_random_mdp(2, 2, seed=0), section4_spec, tol=1e-12, max_iter=2)
    assert err.value.iterations == 2 and err.value.residual > 0


def test_bad_inputs(section4_spec):
    m = gen_random_mdp(2, 2, seed=0)
    with pytest.raises(ValidationError):
        bellman_apply(m, section4_spec, [0.0])
    with pytest.raises(ValidationError):
        bellman_apply(m, section4_spec, [0.0, np.nan])
    with pytest.raises(ValidationError):
        nested_risk_eval(m, section4_spec, SimplexPolicy.uniform(2, 2), -1)


def test_beta_cost_oracle_runs_and_roundtrips(tmp_path, section4_spec):
    m = gen_random_mdp(2, 2, "beta", seed=6)
    sol = value_iteration(m, section4_spec, tol=1e-9)
    assert np.all((sol.v_star >= 0) & (sol.v_star <= m.v_max))
    sol.save(tmp_path / "o.json")
    again = OracleSolution.load(tmp_path / "o.json")
    np.testing.assert_array_equal(again.v_star, sol.v_star)
    assert again.search == sol.search and again.iterations == sol.iterations


def test_horizon_for():
    T = horizon_for(0.3, 1.0)
    assert 0.3 ** T / 0.7 <= 1e-12 < 0.3 ** (T - 1) / 0.7


# -- simplex search ----------------------------------------------------------------------------

@pytest.mark.parametrize("k, d, count", [(2, 20, 21), (3, 20, 231), (4, 20, 1771), (1, 5, 1)])
def test_lattice_size(k, d, count):
    pts = lattice(k, d)
    assert pts.shape == (count, k)
    np.testing.assert_allclose(pts.sum(axis=1), 1.0, atol=1e-12)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6))
def test_projection_lands_on_the_simplex(v):
    p = project_simplex(np.array(v))[0]
    assert p.min() >= 0 and p.sum() == pytest.approx(1.0, abs=1e-12)
    # projection of a simplex point is itself
    np.testing.assert_allclose(project_simplex(p)[0], p, atol=1e-12)


def test_search_finds_interior_minimum_and_is_deterministic():
    target = np.array([0.13, 0.52, 0.35])
    obj = lambda L: np.sum((L - target) ** 2, axis=1)
    best, w, base = SimplexSearch().minimize(obj, 3)
    assert best <= base and np.max(np.abs(w - target)) < 1e-3
    assert SimplexSearch().minimize(obj, 3)[1].tolist() == w.tolist()


def test_search_ties_break_lexicographically():
    best, w, _ = SimplexSearch.vertices().minimize(lambda L: np.zeros(len(L)), 3)
    assert w.tolist() == [0.0, 0.0, 1.0]
    with pytest.raises(ValidationError):
        SimplexSearch(grid_step=0.0)
