import numpy as np
import pytest

from bsvar import gibbs, harness
from bsvar.model import specify


@pytest.fixture(scope="session")
def homo_draws():
    """Posterior draws of a small homoskedastic model shared across tests."""
    raw, truth = harness.simulate_data("homo", T=150, N=2, seed=11)
    spec = specify(raw, p=1, family="homo")
    return gibbs.estimate(spec, 400, rng=3), truth


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    """Store a one-line acceptance verdict for the terminal summary."""
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
