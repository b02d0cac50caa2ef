import functools
import pathlib
import sys
from fractions import Fraction

import pytest

from ntpsim.scenario import execute, load_scenario
from ntpsim.simnet import Host, Network

sys.path.insert(0, str(pathlib.Path(__file__).parent))

SCENARIOS = pathlib.Path(__file__).resolve().parent.parent / "scenarios"

# lines printed by the acceptance suite at the end of the run
ACCEPTANCE_LINES = []


@functools.lru_cache(maxsize=None)
def run_named(name: str, seed=None):
    return execute(load_scenario(SCENARIOS / f"{name}.ini"), seed)


@pytest.fixture
def net():
    n = Network()
    n.add_segment(1)
    n.add_segment(2)
    return n


class Recorder(Host):
    """Collects everything delivered to it."""

    def __init__(self, name):
        super().__init__(name)
        self.got = []
        self.sniffed = []

    def receive(self, record):
        self.got.append(record)

    def on_sniff(self, record):
        self.sniffed.append(record)


def F(x):
    return Fraction(x)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
