import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from remar_ds.data import PhantomSpec, build_split, generate_dataset

_limits = threadpool_limits(limits=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_pairs():
    return generate_dataset(6, PhantomSpec(size=32), 10, seed=7)


@pytest.fixture(scope="session")
def small_split(small_pairs):
    return build_split(small_pairs, 0.7, seed=7)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
