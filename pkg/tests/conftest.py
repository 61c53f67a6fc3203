import numpy as np
import pytest

from dualproxy.problems import Mode, ProblemFamily


def two_var_family(mode=Mode.CONVEX_QP) -> ProblemFamily:
    """Q = I, A = [1 1], b = 1, x >= 0; for c = 0 the optimum is (1/2, 1/2), nu* = -1."""
    return ProblemFamily.from_arrays(np.eye(2), [[1.0, 1.0]], [1.0], mode=mode, witness=[0.5, 0.5])


@pytest.fixture
def two_var():
    return two_var_family()


@pytest.fixture
def two_var_sin():
    return two_var_family(Mode.NONCONVEX_SIN)


_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance():
    """Records one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}  ({detail})"
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
