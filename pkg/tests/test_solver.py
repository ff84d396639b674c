import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linprog

from library import LIBRARY, kkt_residuals
from wasscopos.solver import Block, ConicBuilder, ConicProblem, Status, smat, solve, solve_lp, svec, svec_len


@pytest.mark.parametrize("name", sorted(LIBRARY))
def test_library(name):
    problem, value = LIBRARY[name]()
    sol = solve(problem)
    assert sol.status == Status.OPTIMAL
    assert abs(sol.primal_objective - value) <= 1e-6
    rp, rd, gap = kkt_residuals(problem, sol)
    assert max(rp, rd) <= 1e-7
    assert gap <= 1e-7


@pytest.mark.parametrize("name", sorted(LIBRARY))
def test_weak_duality_along_the_path(name):
    problem, _ = LIBRARY[name]()
    sol = solve(problem)
    for h in sol.history:
        if h["pres"] <= 1e-6 and h["dres"] <= 1e-6:
            assert h["pobj"] >= h["dobj"] - 1e-6


def test_complementarity_at_optimum():
    problem, _ = LIBRARY["sdp_max_offdiag"]()
    sol = solve(problem)
    assert sol.x @ sol.s / 2 <= 1e-6
    np.testing.assert_allclose(smat(sol.x), np.ones((2, 2)), atol=1e-6)


def test_svec_is_an_isometry():
    rng = np.random.default_rng(0)
    X, Y = rng.standard_normal((2, 4, 4))
    X, Y = X + X.T, Y + Y.T
    assert svec(X) @ svec(Y) == pytest.approx(np.trace(X @ Y))
    np.testing.assert_allclose(smat(svec(X)), X)
    assert svec_len(4) == 10


def test_infeasible_equalities():
    p = ConicProblem([1.0], [[1.0]], [-1.0], [Block("nonneg", 1)])
    assert solve(p).status == Status.INFEASIBLE


def test_inconsistent_rows_caught_in_presolve():
    p = ConicProblem([1.0, 1.0], [[1.0, 1.0], [2.0, 2.0]], [1.0, 3.0], [Block("nonneg", 2)])
    assert solve(p).status == Status.INFEASIBLE


def test_unbounded():
    p = ConicProblem([-1.0, 0.0], [[1.0, -1.0]], [0.0], [Block("nonneg", 2)])
    assert solve(p).status == Status.UNBOUNDED


def test_builder_matches_hand_assembly():
    bld = ConicBuilder()
    x = bld.add_variables("nonneg", 2)
    bld.add_rows([(x[0], [1.0]), (x[1], [1.0])], [1.0])
    bld.set_cost(x[0], -1.0)
    sol = solve(bld.build())
    assert sol.primal_objective == pytest.approx(-1.0, abs=1e-7)


def test_block_validation():
    with pytest.raises(ValueError):
        Block("cube", 2)
    with pytest.raises(ValueError):
        Block("soc", 1)
    with pytest.raises(ValueError):
        ConicProblem([1.0, 2.0], [[1.0, 1.0]], [1.0], [Block("nonneg", 3)])


def test_problem_json_round_trip():
    problem, value = LIBRARY["mixed_blocks"]()
    back = ConicProblem.from_json(problem.to_json())
    assert solve(back).primal_objective == pytest.approx(value, abs=1e-6)


# -- LP front end -------------------------------------------------------------


def test_single_cell_transport():
    sol = solve_lp([0.0], [[1.0], [1.0]], [1.0, 1.0])
    assert sol.optimal
    assert sol.x[0] == pytest.approx(1.0, abs=1e-8)


def test_largest_order_statistic_lp():
    sol = solve_lp([-3.0, -1.0, -2.0], [[1, 1, 1.0]], [1.0])
    assert -sol.value == pytest.approx(3.0, abs=1e-6)


def test_duplicated_rows_lp():
    A = [[1.0, 1.0], [1.0, 1.0]]
    sol = solve_lp([-1.0, -2.0], A, [1.0, 1.0])
    assert sol.optimal and sol.value == pytest.approx(-2.0, abs=1e-6)


def test_bounds_handled():
    # max x + y with -1 <= x <= 2, y <= 3 free below, x + y <= 4 via slack
    sol = solve_lp([-1.0, -1.0, 0.0], [[1.0, 1.0, 1.0]], [4.0], bounds=[(-1, 2), (None, 3), (0, None)])
    assert sol.value == pytest.approx(-4.0, abs=1e-7)
    assert -1 - 1e-8 <= sol.x[0] <= 2 + 1e-8 and sol.x[1] <= 3 + 1e-8


@given(
    c=arrays(float, 4, elements=st.floats(-2, 2)),
    A=arrays(float, (2, 4), elements=st.floats(0.1, 2)),
    w=arrays(float, 4, elements=st.floats(0, 1)),
)
def test_random_lp_matches_highs(c, A, w):
    b = A @ w  # feasible by construction, bounded since A > 0
    ref = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    sol = solve_lp(c, A, b)
    assert sol.optimal
    assert sol.value == pytest.approx(ref.fun, abs=1e-6 * (1 + abs(ref.fun)))


def test_repeated_smallest_eigenvalue():
    # C = 4 * ones has eigenvalues (0, 0, 12): a two-dimensional optimal face,
    # and integer data that once produced an exactly singular KKT factor
    p = ConicProblem(svec(4 * np.ones((3, 3))), [svec(np.eye(3))], [1.0], [Block("psd", 3)])
    sol = solve(p, feas_tol=1e-9, gap_tol=1e-9)
    assert sol.status == Status.OPTIMAL
    assert sol.primal_objective == pytest.approx(0.0, abs=1e-6)


@given(arrays(float, (3, 3), elements=st.floats(-3, 3)))
def test_random_min_eigenvalue(B):
    C = B + B.T
    p = ConicProblem(svec(C), [svec(np.eye(3))], [1.0], [Block("psd", 3)])
    sol = solve(p, feas_tol=1e-9, gap_tol=1e-9)
    assert sol.status == Status.OPTIMAL
    assert sol.primal_objective == pytest.approx(np.linalg.eigvalsh(C)[0], abs=1e-6)


@given(arrays(float, 3, elements=st.floats(-5, 5)))
def test_random_soc_projection_norm(a):
    # min t  s.t. (t, x) in SOC, x = a  ->  ||a||
    p = ConicProblem([1.0, 0, 0, 0], np.eye(4)[1:], a, [Block("soc", 4)])
    sol = solve(p, feas_tol=1e-9, gap_tol=1e-9)
    assert sol.status == Status.OPTIMAL
    assert sol.primal_objective == pytest.approx(np.linalg.norm(a), abs=1e-6)
