import numpy as np
import pytest
from scipy.special import ndtri_exp

from seqgraph.boundaries import HypothesisPlan, PValueFamily, SpendingFunction, get_table
from seqgraph.graph import validate_graph

# Fixed-sequence test: full level on H1, passed down the chain on rejection.
CHAIN_WEIGHTS = [1.0, 0.0, 0.0, 0.0]
CHAIN_TRANSITION = [
    [0, 1, 0, 0],
    [0, 0, 1, 0],
    [0, 0, 0, 1],
    [0, 0, 0, 0],
]

# Worked-example repeated p-values, stages in columns.
EXAMPLE_P = np.array(
    [
        [0.02, 0.03],
        [0.04, 0.02],
        [0.02, 0.03],
        [0.02, 0.01],
    ]
)
EXAMPLE_ALPHA = 0.025
EXAMPLE_FRACTIONS = (0.5, 1.0)


@pytest.fixture
def chain_graph():
    return validate_graph(CHAIN_WEIGHTS, CHAIN_TRANSITION)


def estimates_for_repeated_p(repeated_p, fractions=EXAMPLE_FRACTIONS, std_error=1.0):
    """Reverse-engineer stagewise estimates whose repeated p-values match.

    Uses the same cached level tables as the analysis path, so the targets
    are reproduced to interpolation-knot precision.
    """
    repeated_p = np.asarray(repeated_p, dtype=float)
    m, K = repeated_p.shape
    spending = SpendingFunction("pocock_like")
    tab = get_table(spending, fractions)
    est = np.empty((m, K))
    for k in range(K):
        log_level = tab.log_levels(np.log(repeated_p[:, k]), k)
        est[:, k] = -std_error * ndtri_exp(log_level)
    plans = [HypothesisPlan(spending, tuple(fractions))] * m
    se = np.full((m, K), std_error)
    return PValueFamily(plans, est, se)


@pytest.fixture
def example_family():
    return estimates_for_repeated_p(EXAMPLE_P)
