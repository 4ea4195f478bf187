"""Shared fixtures: reference models reused across the test modules."""

import numpy as np
import pytest

from smoothtail import (
    InhomLaw,
    ModelSpec,
    OffspringLaw,
    WeightLaw,
    make_critical_lognormal,
    make_two_root_lognormal,
)

# The heavy Monte Carlo tolerances below are all 3-sigma (or wider)
# bounds at pinned seeds, so every assertion is deterministic: a test
# either always passes or always fails for a given code state.


@pytest.fixture(scope="session")
def critical_spec():
    """The reference critical model: alpha = 1/2, two children."""
    return make_critical_lognormal(0.5, 2)


@pytest.fixture(scope="session")
def two_root_spec():
    """Lognormal model whose Mellin function crosses 1 twice."""
    return make_two_root_lognormal(-3.0, np.sqrt(2.0), 2)


@pytest.fixture(scope="session")
def halving_spec():
    """Deterministic single-child cascade: R = sum_k 2^{-k} = 2."""
    return ModelSpec(offspring=OffspringLaw.fixed(1),
                     weight=WeightLaw.deterministic(0.5),
                     inhom=InhomLaw.constant(1.0),
                     label="halving")


@pytest.fixture(scope="session")
def det_cascade_spec():
    """Two children of weight 0.4 each: E R = 1 / (1 - 0.8) = 5."""
    return ModelSpec(offspring=OffspringLaw.fixed(2),
                     weight=WeightLaw.deterministic(0.4),
                     inhom=InhomLaw.constant(1.0),
                     label="det-cascade")


@pytest.fixture(scope="session")
def finite_mix_spec():
    """Small finite-support model exercising every law family branch."""
    return ModelSpec(
        offspring=OffspringLaw.finite([1, 3], [0.5, 0.5]),
        weight=WeightLaw.finite([0.5, 1.5], [0.6, 0.4]),
        inhom=InhomLaw.constant(1.0),
        label="finite-mix")
