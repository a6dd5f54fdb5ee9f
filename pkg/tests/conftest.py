import numpy as np
import pytest

from repgelan.config import bundled_config, parse_config
from repgelan.graph import build_graph


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_graph():
    return build_graph(parse_config(bundled_config("toy.cfg")), 128, seed=1)


def rand4(rng, *shape):
    return rng.standard_normal(shape).astype(np.float32)


ACCEPTANCE_LINES = {}


def record(number, ok, detail):
    """Store one acceptance line; the test still asserts on ``ok``."""
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
