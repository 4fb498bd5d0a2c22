import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cellvar.dirichlet import SolverConfig


@pytest.fixture
def fast_config():
    """Small solver budget for unit tests."""
    return SolverConfig(max_iterations=400, multistart_count=2, rng_seed=7)


@pytest.fixture
def multistart_config():
    """Budget for nonconvex problems that need the structured starts."""
    return SolverConfig(max_iterations=600, multistart_count=4, rng_seed=7)
