import sys

import numpy as np
import pytest

from otgmm.measures import EmpiricalMeasure
from otgmm.mc_harness import rct_samples


def uniform(n: int) -> EmpiricalMeasure:
    return EmpiricalMeasure(np.arange(n, dtype=float), np.full(n, 1.0 / n))


def random_measure(rng, n: int) -> EmpiricalMeasure:
    w = rng.random(n) + 0.1
    return EmpiricalMeasure(np.arange(n, dtype=float), w / w.sum())


@pytest.fixture(scope="session")
def rct_small():
    return rct_samples(300, 0.0, 2.0, 1.0, seed=11)


@pytest.fixture(scope="session")
def rct_4000():
    return rct_samples(4000, 0.0, 2.0, 1.0, seed=0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
