import numpy as np
import pytest

from dscem.cache import SampleCache
from dscem.lcd import OptimizerConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tmp_cache(tmp_path_factory):
    """Isolated sample cache; sets are optimized on first use with a reduced budget."""
    return SampleCache(tmp_path_factory.mktemp("lcd-cache"), config=OptimizerConfig(restarts=1, max_iter=400))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def _report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
