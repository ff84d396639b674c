import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import data, ssa_program
from wasscopos.calibrate import (
    DEFAULT_GRID,
    CalibrationCurve,
    CalibrationError,
    calibration_curve,
    default_train_size,
    empirical_confidence,
    monotone_confidence,
    select_radius,
    split,
)
from wasscopos.experiments import build_case, sample


def curve(grid, conf):
    grid, conf = np.asarray(grid, float), np.asarray(conf, float)
    return CalibrationCurve(grid, conf, conf, K=10, N_T=5, seed=0)


@pytest.fixture(scope="module")
def ssa_data():
    return sample(build_case("ssa", 1).distribution, 12, seed=3)


# -- split --------------------------------------------------------------------


def test_split_sizes_and_disjointness():
    d = data(np.arange(30.0).reshape(10, 3))
    pairs = split(d, 3, 5, seed=1)
    assert len(pairs) == 3
    for train, val in pairs:
        assert train.N == val.N == 5
        rows = {tuple(r) for r in train.samples} | {tuple(r) for r in val.samples}
        assert len(rows) == 10


def test_split_leave_one_out():
    d = data(np.arange(30.0).reshape(10, 3))
    assert all(val.N == 1 for _, val in split(d, 4, 9))


def test_split_is_seeded():
    d = data(np.random.default_rng(0).random((8, 3)))
    a, b = split(d, 5, 4, seed=7), split(d, 5, 4, seed=7)
    for (ta, va), (tb, vb) in zip(a, b):
        np.testing.assert_array_equal(ta.samples, tb.samples)
        np.testing.assert_array_equal(va.samples, vb.samples)
    c = split(d, 5, 4, seed=8)
    assert any(not np.array_equal(x[0].samples, y[0].samples) for x, y in zip(a, c))


@pytest.mark.parametrize("N_T", [0, 10, 11])
def test_split_rejects_bad_training_size(N_T):
    with pytest.raises(CalibrationError):
        split(data(np.ones((10, 3))), 3, N_T)


def test_default_training_size_is_half_rounded_up():
    assert [default_train_size(N) for N in (2, 3, 10, 41)] == [1, 2, 5, 21]


# -- selection ----------------------------------------------------------------


def test_select_threshold_scan():
    assert select_radius(curve([0.01, 0.1, 0.2], [0.40, 0.85, 0.92]), 0.1) == 0.2


def test_select_with_zero_beta_takes_the_full_confidence_radius():
    assert select_radius(curve([0.1, 1.0, 2.0], [0.5, 0.9, 1.0]), 0.0) == 2.0


def test_select_errors_when_nothing_qualifies():
    with pytest.raises(CalibrationError, match="grid"):
        select_radius(curve([0.1, 0.2], [0.3, 0.6]), 0.1)


def test_select_rejects_bad_beta():
    with pytest.raises(CalibrationError):
        select_radius(curve([0.1], [1.0]), 1.0)


@given(
    conf=st.lists(st.floats(0, 1), min_size=1, max_size=15),
    b1=st.floats(0, 0.99),
    b2=st.floats(0, 0.99),
)
def test_larger_beta_never_selects_a_larger_radius(conf, b1, b2):
    c = curve(np.arange(1, len(conf) + 1) * 0.1, monotone_confidence(np.append(conf[:-1], 1.0)))
    lo, hi = sorted((b1, b2))
    assert select_radius(c, hi) <= select_radius(c, lo)


# -- isotonic fit -------------------------------------------------------------


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_monotone_fit_is_nondecreasing_and_bounded(raw):
    fit = monotone_confidence(raw)
    assert np.all(np.diff(fit) >= -1e-12)
    assert fit.min() >= 0 and fit.max() <= 1
    assert fit.mean() == pytest.approx(np.mean(raw), abs=1e-9)  # isotonic fit preserves the mean


def test_monotone_fit_keeps_sorted_input():
    raw = np.array([0.1, 0.5, 0.5, 0.9])
    np.testing.assert_allclose(monotone_confidence(raw), raw)


def test_monotone_fit_pools_a_violation():
    np.testing.assert_allclose(monotone_confidence([0.2, 0.6, 0.4, 1.0]), [0.2, 0.5, 0.5, 1.0])


# -- curves -------------------------------------------------------------------


def test_csv_round_trip(tmp_path):
    c = curve([0.001, 0.1, 2.0], [1 / 3, 0.7, 1.0])
    c.to_csv(tmp_path / "curve.csv")
    back = CalibrationCurve.from_csv(tmp_path / "curve.csv")
    np.testing.assert_array_equal(back.grid, c.grid)
    np.testing.assert_array_equal(back.confidence, c.confidence)
    assert (back.K, back.N_T, back.seed) == (10, 5, 0)
    header = (tmp_path / "curve.csv").read_text().splitlines()[0]
    assert header == "epsilon,confidence,K,N_T,seed"


def test_curve_is_monotone_and_saturates(ssa_data):
    c = calibration_curve(ssa_program(), ssa_data, DEFAULT_GRID, K=6, seed=2)
    assert np.all(np.diff(c.raw) >= 0)  # shared splits make the raw curve monotone
    assert np.all(np.diff(c.confidence) >= 0)
    assert c.confidence[-1] == 1.0
    assert select_radius(c, 0.1) in DEFAULT_GRID


def test_bisect_matches_full(ssa_data):
    grid = (0.0, 0.01, 0.1, 0.5, 1.0, 2.0)
    full = calibration_curve(ssa_program(), ssa_data, grid, K=5, seed=4, mode="full")
    fast = calibration_curve(ssa_program(), ssa_data, grid, K=5, seed=4, mode="bisect")
    np.testing.assert_array_equal(full.raw, fast.raw)


def test_curve_is_deterministic(ssa_data):
    grid = (0.0, 0.1, 2.0)
    a = calibration_curve(ssa_program(), ssa_data, grid, K=4, seed=9)
    b = calibration_curve(ssa_program(), ssa_data, grid, K=4, seed=9)
    np.testing.assert_array_equal(a.raw, b.raw)
    np.testing.assert_array_equal(a.targets, b.targets)


def test_singleton_grid_selects_its_radius(ssa_data):
    c = calibration_curve(ssa_program(), ssa_data, [2.0], K=5, seed=0)
    assert c.confidence[0] == 1.0
    assert select_radius(c, 0.1) == 2.0


def test_curve_rejects_bad_configuration(ssa_data):
    with pytest.raises(CalibrationError):
        calibration_curve(ssa_program(), ssa_data, [], K=2)
    with pytest.raises(CalibrationError):
        calibration_curve(ssa_program(), ssa_data, [-0.1, 0.2], K=2)
    with pytest.raises(CalibrationError):
        calibration_curve(ssa_program(), ssa_data, [0.1], K=2, mode="grid")


def test_empirical_confidence_matches_curve(ssa_data):
    c = calibration_curve(ssa_program(), ssa_data, [0.0, 0.5], K=5, seed=6, mode="full")
    assert empirical_confidence(ssa_program(), ssa_data, 0.5, K=5, seed=6) == c.raw[1]


def test_zero_radius_misses_some_validation_sets():
    # max of three numbers: training SAA on half the data rarely covers the other half
    d = sample(build_case("ssa", 0).distribution, 20, seed=11)
    assert empirical_confidence(ssa_program(), d, 0.0, K=10, seed=1) < 1.0


@settings(max_examples=5)
@given(seed=st.integers(0, 1000))
def test_raw_confidence_is_monotone_on_shared_splits(seed):
    d = sample(build_case("ssa", seed).distribution, 8, seed=seed)
    c = calibration_curve(ssa_program(), d, (0.0, 0.05, 0.3, 1.0), K=4, seed=seed, mode="full")
    assert np.all(np.diff(c.raw) >= 0)
