import numpy as np
import pytest

from qsdlab.chain import CriticalLinearBD, KilledMM1, build_generator


@pytest.fixture(scope="session")
def mm1():
    return KilledMM1(1.0, 4.0)


@pytest.fixture(scope="session")
def crit():
    return CriticalLinearBD(1.0)


@pytest.fixture(scope="session")
def g2000(mm1):
    return build_generator(mm1, 2000)


@pytest.fixture(scope="session")
def g500(mm1):
    return build_generator(mm1, 500)


def tv(p, q):
    n = max(len(p), len(q))
    a, b = np.zeros(n), np.zeros(n)
    a[: len(p)], b[: len(q)] = p, q
    return 0.5 * np.abs(a - b).sum()
