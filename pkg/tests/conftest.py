import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wasscopos.experiments import ProjectNetwork, build_case
from wasscopos.model import Dataset, MixedBinaryProgram, SupportCone, enforce_binary_bounds

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def ssa_program(n: int = 3) -> MixedBinaryProgram:
    """max zeta'x over the simplex: the largest of n numbers."""
    F = np.zeros((n, n + 1))
    F[:, 1:] = np.eye(n)
    return MixedBinaryProgram(np.ones((1, n)), [1.0], F, (), SupportCone("nonneg_orthant", n + 1))


def knapsack_program(weights=(5.0, 4.0, 6.0, 3.0), capacity=10.0, enforce=True) -> MixedBinaryProgram:
    w = list(weights)
    n = len(w)
    F = np.zeros((n + 1, n + 1))
    F[:n, 1:] = np.eye(n)
    prog = MixedBinaryProgram(
        np.array([w + [1.0]]), [capacity], F, tuple(range(n)), SupportCone("nonneg_orthant", n + 1)
    )
    return enforce_binary_bounds(prog) if enforce else prog


def soc_program() -> MixedBinaryProgram:
    """Simplex feasible set, objective vector in the unit disc."""
    F = np.zeros((2, 3))
    F[:, 1:] = np.eye(2)
    return MixedBinaryProgram(np.ones((1, 2)), [1.0], F, (), SupportCone("soc", 3))


def box_program() -> MixedBinaryProgram:
    """Simplex feasible set, objective vector in [0, 1]^2 (bounded support)."""
    P = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, -1, 0], [1, 0, -1.0]])
    F = np.zeros((2, 3))
    F[:, 1:] = np.eye(2)
    return MixedBinaryProgram(np.ones((1, 2)), [1.0], F, (), SupportCone("polyhedral", 3, P))


@pytest.fixture
def ssa():
    return ssa_program()


@pytest.fixture
def knapsack():
    return knapsack_program()


@pytest.fixture(scope="session")
def project_case():
    return build_case("project", 0)


@pytest.fixture
def network():
    return ProjectNetwork()


def data(rows) -> Dataset:
    return Dataset.from_raw(rows)


# -- acceptance report ---------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line and returns ``ok``."""

    def record(n: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE[n])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
