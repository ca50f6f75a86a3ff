import time
from pathlib import Path

import pytest

from critvar import synth

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"

# creation-order node id -> reference numbering of the worked-example trace
FIXTURE_IDS = {0: 1, 1: 2, 2: 3, 3: 4, 4: 5, 5: 7, 6: 6, 7: 10, 8: 12, 9: 8, 10: 9,
                11: 11, 12: 13, 13: 14, 14: 15}

CORPUS_SEED = 1

# acceptance outcomes, printed in the terminal summary
ACCEPTANCE = []
TIMINGS = {}


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def corpus_data(tmp_path_factory):
    """The six-program synthetic corpus with measured CDP, built once per session."""
    t0 = time.perf_counter()
    programs = synth.generate(CORPUS_SEED, 6, 31)
    data = [synth.build_program_data(p) for p in programs]
    TIMINGS["corpus"] = time.perf_counter() - t0
    return data


@pytest.fixture(scope="session")
def small_program():
    return synth.generate(7, 1, 6)[0]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for ok, name, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
