"""Shared fixtures: a desk-scale system with a fast step for unit tests."""

import numpy as np
import pytest

from fkns import ForcingSpec, NoiseSpec, SimulationParams, TorusSpec


@pytest.fixture(scope="session")
def spec():
    return TorusSpec(8, 32)


@pytest.fixture(scope="session")
def params(spec):
    return SimulationParams(0.5, 0.02, spec)


@pytest.fixture(scope="session")
def forcing(spec):
    return ForcingSpec.default(spec, 0.6)


@pytest.fixture(scope="session")
def noise(spec):
    return NoiseSpec.default(spec, 0.35)


@pytest.fixture(scope="session")
def system(params, forcing, noise):
    return dict(params=params, forcing=forcing, noise=noise)


@pytest.fixture()
def rng():
    return np.random.default_rng(2024)
