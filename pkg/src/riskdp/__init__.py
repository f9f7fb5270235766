"""Risk-averse MDPs with Kusuoka-type risk over randomized policies.

Exact dynamic-programming oracle, a distributional g-value learner, the
finite-sample bound calculator and a replicated experiment harness.
"""
__version__ = "0.1.0"

from .errors import ConvergenceError, DivergenceError, NumericalError, ValidationError
from .mdp import CostModel, Dataset, MdpModel, SimplexPolicy, gen_random_mdp, simulate
from .oracle import OracleSolution, bellman_apply, nested_risk_eval, value_iteration
from .risk import DiscreteDistribution, GCurve, RiskSpec, avar, kusuoka_risk
from .simplex import SimplexSearch

__all__ = [
    "ConvergenceError", "DivergenceError", "NumericalError", "ValidationError",
    "CostModel", "Dataset", "MdpModel", "SimplexPolicy", "gen_random_mdp", "simulate",
    "OracleSolution", "bellman_apply", "nested_risk_eval", "value_iteration",
    "DiscreteDistribution", "GCurve", "RiskSpec", "avar", "kusuoka_risk",
    "SimplexSearch",
]
