import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from riskdp.mdp import CostModel, MdpModel
from riskdp.risk import RiskSpec

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


def scalar_model(cost=0.5, gamma=0.3) -> MdpModel:
    return MdpModel([[[1.0]]], CostModel("deterministic", 1.0, table=[[[cost]]]), gamma)


@pytest.fixture
def section4_spec() -> RiskSpec:
    return RiskSpec.section4(normalize=True)


@pytest.fixture(scope="session")
def oracle_cases():
    return json.loads((FIXTURES / "oracle_2x2.json").read_text())


def random_spec(rng, n_measures=None, max_atoms=3) -> RiskSpec:
    n_measures = n_measures or int(rng.integers(1, 4))
    measures = []
    for _ in range(n_measures):
        k = int(rng.integers(1, max_atoms + 1))
        xi = rng.uniform(0.01, 1.0, size=k)
        w = rng.dirichlet(np.ones(k))
        measures.append(list(zip(xi.tolist(), w.tolist())))
    return RiskSpec.from_pairs(measures)
