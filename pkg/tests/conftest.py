import time

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("dqvi", max_examples=60, deadline=None, derandomize=True)
settings.load_profile("dqvi")

SESSION = {"start": None, "lines": []}


def pytest_sessionstart(session):
    SESSION["start"] = time.perf_counter()


def pytest_collection_modifyitems(session, config, items):
    # acceptance last, so the wall-clock criterion sees the whole run
    items.sort(key=lambda item: item.nodeid.startswith("tests/test_acceptance.py"))


def pytest_terminal_summary(terminalreporter):
    if SESSION["lines"]:
        terminalreporter.section("acceptance")
        for line in SESSION["lines"]:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
