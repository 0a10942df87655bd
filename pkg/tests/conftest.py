import numpy as np
import pytest

from alstokes.mesh import build_rect_mesh
from alstokes.problems.sinker import SinkerConfig, sinker_blocks


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def sinker_4x4():
    """Q2 x P1disc sinker problem, DR = 1e4, on a 4x4 mesh."""
    return sinker_blocks(build_rect_mesh(nx=4, ny=4), 2, SinkerConfig(DR=1e4, n=8))


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
