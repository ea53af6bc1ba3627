import numpy as np
import pytest

from plyhomog.laws import AngleLaw, RadiusLaw
from plyhomog.microgeom import Box, MicrostructureSpec


def make_spec(eps=0.25, a=0.2, gamma=None, rho=None, lo=(0, 0, 0), hi=(1, 1, 1), r_exp=0.75):
    return MicrostructureSpec(omega=Box(lo, hi), gamma=gamma or AngleLaw(), rho=rho or RadiusLaw(1.0),
                              a=a, eps=eps, r_exp=r_exp)


@pytest.fixture
def spec_flat():
    return make_spec()


@pytest.fixture
def spec_twist():
    return make_spec(gamma=AngleLaw("linear", 0.0, np.pi))


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
