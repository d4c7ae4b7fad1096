from importlib import resources
from pathlib import Path

import pytest

from hydrosoc.inp import read_network
from hydrosoc.scenario import read_scenario

DATA = Path(str(resources.files("hydrosoc") / "data"))
TEST_DATA = Path(__file__).parent / "data"
BENCH_INP = DATA / "networks" / "bench50.inp"
TWO_LOOP_INP = DATA / "networks" / "two_loop.inp"
WEST_SCN = DATA / "scenarios" / "west_arsenic.scn"


@pytest.fixture(scope="session")
def bench():
    return read_network(BENCH_INP)


@pytest.fixture(scope="session")
def two_loop():
    return read_network(TWO_LOOP_INP)


@pytest.fixture(scope="session")
def west():
    return read_scenario(WEST_SCN)


SLOW_SCN = DATA / "scenarios" / "west_slow.scn"

# criterion number -> (title, verdict, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, verdict, detail = ACCEPTANCE[n]
        line = f"criterion {n:>2}  {verdict}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
