import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cohortney.sequences import EventSequence  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_sequences(rng, count, horizon=2_000_000, max_events=30, prefix="r"):
    out = []
    for i in range(count):
        k = int(rng.integers(0, max_events + 1))
        offs = np.sort(rng.integers(1, horizon, size=k))
        out.append(EventSequence(f"{prefix}{i:05d}", 0, tuple(int(x) for x in offs)))
    return out


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
