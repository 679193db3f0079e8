"""Shared fixtures: small problems and mixing matrices reused across tests."""

import numpy as np
import pytest

from ledsim import (MixingMatrix, build_graph, complete_mixing,
                    metropolis_weights, quadratic_problem, synth_logistic)
from ledsim.problems import SynthConfig


@pytest.fixture(scope="session")
def ring15():
    return metropolis_weights(build_graph("ring", 15))


@pytest.fixture(scope="session")
def ring6():
    return metropolis_weights(build_graph("ring", 6))


@pytest.fixture(scope="session")
def complete6():
    return complete_mixing(6)


@pytest.fixture(scope="session")
def quad6():
    """Small heterogeneous strongly convex quadratic, deterministic oracle."""
    return quadratic_problem(6, 4, mu=0.3, lip=1.0, heterogeneity=1.0, seed=5)


@pytest.fixture(scope="session")
def quad6_noisy():
    return quadratic_problem(6, 4, mu=0.3, lip=1.0, heterogeneity=1.0, seed=5,
                             sigma=0.05)


@pytest.fixture(scope="session")
def small_logistic():
    cfg = SynthConfig(n_nodes=3, dim=4, n_samples=50, reg=0.01,
                      sigma_u=6.0, sigma_h=2.0, sigma=0.0)
    return synth_logistic(cfg, seed=7)


@pytest.fixture(scope="session")
def identity6():
    return MixingMatrix.from_dense(np.eye(6))
