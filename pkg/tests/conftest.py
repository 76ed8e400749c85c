import pytest

from causalfuse import Design, SimConfig, generate


@pytest.fixture(scope="session")
def sim_dataset():
    """One draw of the simulation design with a simple random subset."""
    return generate(SimConfig(n1=400, n2=150, reps=1, seed=7), 0)


@pytest.fixture(scope="session")
def known_dataset():
    """One draw with outcome-dependent inclusion probabilities."""
    config = SimConfig(
        n1=600, n2=100, reps=1, seed=3, design=Design.KNOWN_INCLUSION
    )
    return generate(config, 0)
