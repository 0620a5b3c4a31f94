import numpy as np
import pytest

from qnpg.instances import bandit, chain, random3, random_mdp, single_action
from qnpg.mdp import SoftmaxPolicy

# (criterion, passed, detail) rows filled in by test_acceptance.py
ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def bandit_mdp():
    return bandit()


@pytest.fixture
def chain_mdp():
    return chain()


@pytest.fixture
def random3_mdp():
    return random3()


@pytest.fixture
def single_mdp():
    return single_action()


@pytest.fixture
def random2_mdp():
    return random_mdp(2, 2, 0.7, seed=3)


def uniform(mdp):
    return SoftmaxPolicy.for_mdp(mdp)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {crit:>2}: {detail}")


@pytest.fixture
def record_acceptance():
    def record(crit, ok, detail):
        ACCEPTANCE_LINES.append((crit, ok, detail))
    return record
