import pytest

from hybridvem.verification import run_convergence

ACCEPTANCE_LINES: list[str] = []

# refinement levels of the convergence sweep (cells per side)
SWEEP_LEVELS = (4, 8, 16, 32, 64)


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


class _Sweep:
    """Lazily computed convergence tables (test case, both solvers compared)."""

    def __init__(self):
        self._tables = {}

    def __getitem__(self, family):
        if family not in self._tables:
            self._tables[family] = run_convergence(family, SWEEP_LEVELS, compare=True)
        return self._tables[family]


@pytest.fixture(scope="session")
def sweep():
    return _Sweep()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
