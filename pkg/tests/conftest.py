from pathlib import Path

import numpy as np
import pytest

from sorcall.simulate import generate, scenario, substream

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def census_path() -> Path:
    return DATA / "census.csv"


@pytest.fixture(scope="session")
def tt_draw():
    """One moderately sized binary TT sample shared by several tests."""
    return generate(scenario("TT", "binary"), substream(11, 0), n=4000)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[k]
        tag = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"criterion {k:>2}: {tag}  {detail}")
