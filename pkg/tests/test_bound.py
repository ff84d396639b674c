import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import box_program, data, knapsack_program, soc_program, ssa_program
from wasscopos.bound import build, recover_multiplier, saa_value, solve_bound
from wasscopos.model import homogenize
from wasscopos.solver import Status

SSA_DATA = [[3, 1, 2], [1, 4, 1], [2, 2, 2.5]]

# Frozen references. ssa: the worst case over the ball is SAA + eps in closed
# form (shift the largest coordinate by eps) and the bound is tight there.
# The others were computed once with an independent cvxpy model of the same
# SDP on the face of null(E), solved by Clarabel (SCS for the knapsack, where
# Clarabel reports an inaccurate solution; SCS agrees with us to 3e-8).
REFERENCE = {
    "ssa_0.1": (ssa_program, SSA_DATA, 0.1, None, 9.5 / 3 + 0.1),
    "ssa_0.5": (ssa_program, SSA_DATA, 0.5, None, 9.5 / 3 + 0.5),
    "knapsack_0.1": (knapsack_program, [[1, 1, 1, 1], [2.0, 0.5, 1.5, 1.0]], 0.1, None, 3.0065247362),
    "soc_0.2": (soc_program, [[0.3, 0.4], [-0.5, 0.1]], 0.2, None, 0.45),
    "box_0.3": (box_program, [[0.2, 0.9], [0.6, 0.1]], 0.3, None, 1.0),
    "box_0.3_r": (box_program, [[0.2, 0.9], [0.6, 0.1]], 0.3, 4.0, 1.0),
}


@pytest.mark.parametrize("name", sorted(REFERENCE))
def test_reference_values(name):
    make, rows, eps, r, value = REFERENCE[name]
    res = solve_bound(make(), data(rows), eps, r)
    assert res.status == Status.OPTIMAL
    assert res.certified
    assert res.value == pytest.approx(value, abs=1e-6)


def test_dirac_anchor():
    res = solve_bound(ssa_program(), data([[3, 1, 2]]), 0.0)
    assert 3 - 1e-6 <= res.value <= 3 * 1.01
    assert res.certified


def test_monotone_on_fixed_dataset():
    d = data(SSA_DATA)
    lo = solve_bound(ssa_program(), d, 0.1).value
    hi = solve_bound(ssa_program(), d, 0.5).value
    assert lo <= hi + 1e-6


def test_knapsack_dominates_saa():
    prog = knapsack_program()
    d = data([[1, 1, 1, 1], [2.0, 0.5, 1.5, 1.0], [0.3, 2.2, 0.1, 1.7]])
    for eps in (0.0, 0.2):
        assert solve_bound(prog, d, eps).value >= saa_value(prog, d) - 1e-6


def test_trace_bound_never_loosens():
    prog = box_program()
    d = data([[0.2, 0.4], [0.6, 0.1]])
    free = solve_bound(prog, d, 0.1)
    capped = solve_bound(prog, d, 0.1, r=4.0)
    assert capped.value <= free.value + 1e-6
    assert capped.value >= saa_value(prog, d) - 1e-6


def test_large_radius_saturates_on_bounded_support():
    # sup over the box of max(zeta) is 1, reached once the ball covers the corner
    res = solve_bound(box_program(), data([[0.2, 0.4]]), 5.0, r=4.0)
    assert res.value == pytest.approx(1.0, abs=1e-6)
    assert res.lam <= 1e-4


# -- model structure ----------------------------------------------------------


def test_unreduced_block_structure():
    model = build(ssa_program(), data(np.random.default_rng(0).random((10, 3))), 0.1, reduce_face=False)
    p = model.problem
    psd = [b.dim for b in p.blocks if b.kind == "psd"]
    assert psd == [7] * 10
    assert p.m == 10 * 28
    assert model.lam >= 0 and model.u.shape == (10, 1) and model.v.shape == (10, 0)


def test_reduced_blocks_drop_the_equality_directions():
    model = build(ssa_program(), data(np.random.default_rng(0).random((10, 3))), 0.1)
    psd = [b.dim for b in model.problem.blocks if b.kind == "psd"]
    assert psd == [6] * 10
    assert model.u.shape == (10, 0)


def test_zero_radius_objective_has_no_lambda_cost():
    model = build(ssa_program(), data(SSA_DATA), 0.0, reduce_face=False)
    assert model.problem.c[model.lam] == 0.0
    np.testing.assert_allclose(model.problem.c[model.alpha], 1 / 3)


def test_zero_radius_folds_lambda_into_the_face():
    model = build(ssa_program(), data(SSA_DATA), 0.0)
    assert model.lam == -1
    # null([E; L_i]) leaves the x directions with e1 pinned to the sample: n - m of them
    assert [b.dim for b in model.problem.blocks if b.kind == "psd"] == [3] * 3


def test_binary_terms_only_with_binaries():
    d = data([[1, 1, 1, 1]])
    assert build(knapsack_program(), d, 0.1).v.shape == (1, 4)
    assert build(ssa_program(), data([[1, 2, 3]]), 0.1).v.shape == (1, 0)


def test_recovered_matrices_have_psd_remainder():
    prog = knapsack_program()
    res = solve_bound(prog, data([[1, 1, 1, 1], [2.0, 0.5, 1.5, 1.0]]), 0.1, keep_matrices=True)
    assert res.spot_check_passed
    assert len(res.constraint_matrices) == 2
    for G in res.constraint_matrices:
        assert np.allclose(G, G.T)


def test_multiplier_recovery_makes_matrix_psd():
    rng = np.random.default_rng(2)
    E = rng.standard_normal((2, 6))
    V = np.linalg.svd(E)[2][2:].T
    B = rng.standard_normal((6, 6))
    M0 = B + B.T  # indefinite in general
    M0 = M0 + V @ V.T * (1 - np.linalg.eigvalsh(V.T @ M0 @ V).min())  # PD on null(E)
    t = recover_multiplier(M0, E, V)
    assert np.linalg.eigvalsh(M0 + t * E.T @ E).min() >= -1e-9
    # non-orthonormal bases of the same space give the same multiplier
    assert recover_multiplier(M0, E, V @ np.diag([2, 3, 1, 5])) == pytest.approx(t, rel=1e-8)


# -- inputs -------------------------------------------------------------------


def test_rejects_bad_inputs():
    d = data([[1, 2, 3]])
    with pytest.raises(ValueError):
        solve_bound(ssa_program(), d, -0.1)
    with pytest.raises(ValueError):
        solve_bound(ssa_program(), d, np.inf)
    with pytest.raises(ValueError):
        solve_bound(ssa_program(), d, 0.1, r=0.0)
    with pytest.raises(ValueError):
        solve_bound(ssa_program(), data([[1, 2]]), 0.1)
    with pytest.raises(ValueError):
        solve_bound(knapsack_program(enforce=False), data([[1, 1, 1, 1]]), 0.1)


def test_result_json_fields():
    res = solve_bound(ssa_program(), data([[1, 2, 3]]), 0.1, spot_check=False)
    assert set(res.to_json()) == {"epsilon", "N", "value", "lambda", "status", "runtime_ms"}
    assert res.spot_check_passed is None


# -- SAA ----------------------------------------------------------------------


def test_saa_single_sample():
    assert saa_value(ssa_program(), data([[3, 1, 2]])) == pytest.approx(3.0)


def test_saa_duplicates():
    assert saa_value(ssa_program(), data([[3, 1, 2], [3, 1, 2]])) == pytest.approx(3.0)


def test_saa_two_samples():
    assert saa_value(ssa_program(), data([[3, 1, 2], [1, 4, 1]])) == pytest.approx(3.5)


# -- properties ---------------------------------------------------------------

samples = st.lists(
    st.lists(st.floats(0, 4, allow_nan=False), min_size=3, max_size=3), min_size=1, max_size=4
)
# radii strictly inside (0, 1e-3) are outside the supported range (see README)
radii = st.one_of(st.just(0.0), st.floats(1e-3, 1))


@settings(max_examples=12)
@given(rows=samples, e1=radii, e2=radii)
def test_monotone_and_dominating(rows, e1, e2):
    prog = ssa_program()
    d = data(rows)
    lo, hi = sorted((e1, e2))
    a = solve_bound(prog, d, lo, spot_check=False)
    b = solve_bound(prog, d, hi, spot_check=False)
    assert a.status == b.status == Status.OPTIMAL
    assert a.value <= b.value + 1e-6
    assert a.value >= saa_value(prog, d) - 1e-6


@settings(max_examples=8)
@given(rows=samples, eps=st.floats(0, 1))  # any radius: certificates must hold regardless
def test_spot_check_at_every_optimum(rows, eps):
    res = solve_bound(ssa_program(), data(rows), eps, spot_trials=10_000, spot_tol=1e-6)
    assert res.spot_check_passed


def test_tiny_radius_is_exact_or_flagged():
    prog = knapsack_program()
    d = data([[1, 1, 1, 1], [2.0, 0.5, 1.5, 1.0]])
    lo = solve_bound(prog, d, 0.0).value
    hi = solve_bound(prog, d, 1e-3).value
    res = solve_bound(prog, d, 1e-9)
    assert res.spot_check_passed
    if res.status == Status.OPTIMAL:
        assert lo - 1e-6 <= res.value <= hi + 1e-6
    else:
        # a stalled solve is never passed on as a bound
        assert not res.usable
        assert res.lower <= hi + 1e-6


def test_homogenized_constraint_is_consistent_with_values():
    # at the solution, alpha_i bounds the sample's deterministic value from above at eps=0
    prog = ssa_program()
    d = data(SSA_DATA)
    res = solve_bound(prog, d, 0.0)
    hd = homogenize(prog, d)
    assert hd.K.shape[0] == 3
    np.testing.assert_array_less(d.samples[:, 1:].max(axis=1) - 1e-6, res.alpha)
