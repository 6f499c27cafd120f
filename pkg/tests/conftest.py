import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ctjmdp.experiments import figure_two_model, flip_chain_model, parity_policy


@pytest.fixture(scope="session")
def fig2():
    return figure_two_model()


@pytest.fixture(scope="session")
def fig2_parity(fig2):
    return parity_policy(fig2)


@pytest.fixture(scope="session")
def flip():
    return flip_chain_model()


@pytest.fixture
def delta2(fig2):
    g = np.zeros(fig2.n_states)
    g[fig2.state_index["2"]] = 1.0
    return g
