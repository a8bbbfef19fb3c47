import numpy as np
import pytest

from coupledpd import AgentSpec, Box, CommGraph, ConstraintOracle, CostOracle, CoupledProblem
from coupledpd.functions import Affine, QuadraticForm
from coupledpd.harness.examples import build_example1

ACCEPTANCE: dict = {}


def record_acceptance(key: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[key] = (passed, detail)
    print(f"[{'PASS' if passed else 'FAIL'}] acceptance {key}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {key}: {detail}")


def scalar_agent(i, lo, up, cost, rows, x0=None):
    return AgentSpec(i, Box([lo], [up]), CostOracle(cost), ConstraintOracle(rows),
                     x0=None if x0 is None else [x0])


def sq(center, weight=1.0):
    """``weight * (x - center)^2`` on a scalar."""
    return QuadraticForm([[weight]], [-2.0 * weight * center], weight * center ** 2)


@pytest.fixture(scope="session")
def example1():
    return build_example1()


@pytest.fixture
def one_d():
    """f = (x - 2)^2 on [0, 1], g = x - 0.5: x* = 0.5, lam* = 3."""
    agent = scalar_agent(1, 0.0, 1.0, sq(2.0), [Affine([1.0], -0.5)])
    return CoupledProblem((agent,), CommGraph(1, []), 1, [0.25], name="one-d")


@pytest.fixture
def two_agent():
    """(x_i - 2)^2 on [0, 2] with g = (x1 - 1.5, x2 - 0.5): x* = (1, 1), lam* = 2."""
    agents = (scalar_agent(1, 0, 2, sq(2.0), [Affine([1.0], -1.5)]),
              scalar_agent(2, 0, 2, sq(2.0), [Affine([1.0], -0.5)]))
    return CoupledProblem(agents, CommGraph(2, [(0, 1)]), 1, [0.5, 0.5], name="two")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
