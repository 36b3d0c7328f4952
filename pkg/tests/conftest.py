"""Shared fixtures. The trained-cascade fixtures take minutes and are session scoped."""

import time

import pytest

from satcast.experiments import ExperimentConfig, run_comparison, run_transfer

SEED = 7
ACCEPTANCE_LINES = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def gru_comparison():
    """ConvGRU cascade vs persistence at seed 7; also returns wall time."""
    t0 = time.perf_counter()
    report, cascades = run_comparison(SEED, ExperimentConfig(cells=("convgru",)))
    return report, cascades, time.perf_counter() - t0


@pytest.fixture(scope="session")
def transfer_report(gru_comparison):
    _, cascades, _ = gru_comparison
    return run_transfer(SEED, ExperimentConfig(), base=cascades["convgru"].models[1])
