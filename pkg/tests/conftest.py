import numpy as np
import pytest

from hktl import HarmonicPotential, PointSource, build_structure, FlatHKn
from hktl.structure import SampleSpec


def two_centre_potential(c=0.0):
    return HarmonicPotential(c, [PointSource((0.0, 0.0, -1.0), 1), PointSource((0.0, 0.0, 1.0), 1)])


@pytest.fixture(scope="session")
def gh_single():
    return build_structure(HarmonicPotential.point(), positivity_samples=2000)


@pytest.fixture(scope="session")
def gh_two():
    return build_structure(two_centre_potential(), positivity_samples=2000)


@pytest.fixture(scope="session")
def taub_nut():
    return build_structure(HarmonicPotential.point(constant=1.0), positivity_samples=2000)


@pytest.fixture(scope="session")
def flat1():
    return FlatHKn(1)


@pytest.fixture(scope="session")
def flat2():
    return FlatHKn(2)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def small_sample(count=64, seed=7, **kw):
    return SampleSpec(seed=seed, count=count, **kw)
