"""Sample-based learner: transition estimates, surrogate fitting and the outer iteration."""
from .algorithm import AlgorithmConfig, LearnedSolution, run_algorithm
from .approximators import (GApproximator, MlpApproximator, MlpHyper, QGrid, TableApproximator,
                            fit_g_mlp, fit_g_table)
from .bounds import BoundParams, EstPReport, exploration_constant, lemma_estp_suite, theorem_bound
from .estimation import CoverageWarning, EstimatedTransitions, mle_transition
from .update import value_policy_update

__all__ = [
    "AlgorithmConfig", "LearnedSolution", "run_algorithm", "GApproximator", "MlpApproximator", "MlpHyper",
    "QGrid", "TableApproximator", "fit_g_mlp", "fit_g_table", "BoundParams", "EstPReport",
    "exploration_constant", "lemma_estp_suite", "theorem_bound", "CoverageWarning", "EstimatedTransitions",
    "mle_transition", "value_policy_update",
]
