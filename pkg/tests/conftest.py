import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from interest_clock.stream import GeneratorConfig, generate  # noqa: E402

SMALL = dict(n_users=60, n_items=300, days=10, events_low=4, events_middle=8, events_high=16)


@pytest.fixture(scope="session")
def small_stream():
    cfg = GeneratorConfig(**SMALL, seed=3)
    events, pop = generate(cfg)
    return cfg, events, pop


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
