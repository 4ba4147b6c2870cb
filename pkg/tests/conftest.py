import numpy as np
import pytest

from mmaf.levy import LevyBasisSpec
from mmaf.stou import SimGrid, StouModel, simulate


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def gau_small():
    """A 20000 x 6 Gaussian STOU raster, shared by the cheaper statistical tests."""
    model = StouModel(1.0, 2.0, LevyBasisSpec.gaussian(1.0))
    return model, simulate(model, SimGrid(N=20_000, P=6, refine=4, seed=7))
