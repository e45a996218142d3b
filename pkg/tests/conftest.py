import pytest

from darkpool_impact.model import ModelParams

ACCEPTANCE_LINES = []


def record_criterion(number, name, passed, detail=""):
    """Store and print one PASS/FAIL line for an acceptance criterion."""
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}"
    if detail:
        line += f"  [{detail}]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def regular_params():
    """Parameters with nonnegative expected liquidation costs."""
    return ModelParams.build(gamma=1.0, eta=1.0, theta=1.0, alpha=1.0, beta_eta=0.5)


@pytest.fixture
def plain_params():
    """gamma = eta = theta = 1, no dark-pool frictions, infinite liquidity."""
    return ModelParams.build(gamma=1.0, eta=1.0, theta=1.0)
