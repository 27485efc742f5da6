import numpy as np
import pytest

from freeshell import fixtures, flatten


@pytest.fixture(scope="session")
def hemisphere_mesh():
    return fixtures.hemisphere()


@pytest.fixture(scope="session")
def hemisphere_run(hemisphere_mesh):
    """One full flattening of the hemisphere, shared read-only."""
    layout, stats = flatten.run_discrete_flattening(hemisphere_mesh)
    return layout, stats


@pytest.fixture
def hemisphere_layout(hemisphere_run):
    layout, _ = hemisphere_run
    return layout.copy()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
