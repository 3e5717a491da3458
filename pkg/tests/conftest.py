import copy

import pytest

from zira_lab.taskgen import gen_general, gen_task_sequence
from zira_lab.toymodel import build_pretrained


@pytest.fixture(scope="session")
def _pretrained():
    return build_pretrained(seed=0)


@pytest.fixture
def pretrained(_pretrained):
    """Fresh copy of the seed-0 pretrained model; tests may mutate it."""
    return copy.deepcopy(_pretrained)


@pytest.fixture(scope="session")
def general_holdout():
    return gen_general(0)[1]


@pytest.fixture(scope="session")
def short_tasks():
    return gen_task_sequence(0, n_tasks=2, shots="10")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
