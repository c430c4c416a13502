import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from fracbsde.diagnostics import (WeightedNormParams, build_report, dominance, isometry_battery,
                                  isometry_test, malliavin_correction, node_weights,
                                  power_exp_cell_integrals, product_formula_test, random_step_functions,
                                  weighted_distance, weighted_norm_y, weighted_norm_z)
from fracbsde.kernel import DeterministicFn, FbmModel, TimeGrid, inner_product
from fracbsde.sampler import sample_fbm


@pytest.fixture(scope="module")
def paths():
    return sample_fbm(FbmModel.build(0.75, 1.0, 64), 10000, 99)


@settings(max_examples=40, deadline=None)
@given(lo=st.floats(-1.0, 1.0), w=st.floats(0.01, 1.0), beta=st.floats(0.0, 20.0), p=st.floats(0.0, 0.9))
def test_cell_integrals_match_quadrature(lo, w, beta, p):
    hi = lo + w
    ref, _ = integrate.quad(lambda t: abs(t) ** p * np.exp(beta * t), lo, hi,
                            points=[0.0] if lo < 0 < hi else None, epsabs=1e-13, epsrel=1e-11)
    got = power_exp_cell_integrals(np.array([lo]), np.array([hi]), beta, p)[0]
    assert got == pytest.approx(ref, rel=1e-8, abs=1e-12)


def test_node_weights_sum():
    t = np.linspace(-0.25, 1.0, 11)
    W = node_weights(t, 2.0)
    assert W.sum() == pytest.approx((np.exp(2.0) - np.exp(-0.5)) / 2, rel=1e-12)
    W = node_weights(t, 0.0, a=0.0, b=0.5)
    assert W.sum() == pytest.approx(0.5, rel=1e-12)


def test_weighted_norm_constant_closed_form():
    t = np.linspace(0, 1, 17)
    Y = np.full((5, 17), 2.0)
    prm = WeightedNormParams(beta=3.0, H=0.75)
    assert weighted_norm_y(Y, t, prm) == pytest.approx(2 * np.sqrt((np.exp(3) - 1) / 3), rel=1e-12)
    # int_0^1 t^(1/2) dt = 2/3
    assert weighted_norm_z(Y, t, WeightedNormParams(0.0, H=0.75)) == pytest.approx(2 * np.sqrt(2 / 3), rel=1e-12)
    with pytest.raises(ValueError):
        weighted_norm_z(Y, t, WeightedNormParams(1.0))
    with pytest.raises(ValueError):
        WeightedNormParams(beta=-1.0)


arrays = st.integers(0, 2 ** 31 - 1)


@settings(max_examples=40, deadline=None)
@given(seed=arrays, c=st.floats(-5, 5), beta=st.floats(0, 10))
def test_norm_homogeneity_and_triangle(seed, c, beta):
    rng = np.random.default_rng(seed)
    t = np.linspace(-0.2, 1.0, 13)
    X, Y = rng.normal(size=(2, 6, 13))
    prm = WeightedNormParams(beta, H=0.7)
    for norm in (weighted_norm_y, weighted_norm_z):
        assert norm(c * X, t, prm) == pytest.approx(abs(c) * norm(X, t, prm), rel=1e-12, abs=1e-300)
        assert norm(X + Y, t, prm) <= (norm(X, t, prm) + norm(Y, t, prm)) * (1 + 1e-12)


def test_norm_zero_iff_zero():
    t = np.linspace(0, 1, 9)
    prm = WeightedNormParams(1.0, H=0.75)
    X = np.zeros((3, 9))
    assert weighted_norm_y(X, t, prm) == 0.0
    X[1, 4] = 1e-8
    assert weighted_norm_y(X, t, prm) > 0


def test_weighted_distance_is_squared_sum():
    t = np.linspace(0, 1, 9)
    a = np.ones((2, 9))
    d = weighted_distance(a, 2 * a, 0 * a, 0 * a, t, 0.0, 0.75)
    assert d == pytest.approx(1.0 + 4 * 2 / 3, rel=1e-12)


def test_dominance_report():
    Y1 = np.array([[0.0, 1.0], [2.0, 3.0]])
    rep = dominance(Y1, Y1 + 0.5)
    assert rep.verdict and rep.fraction == 1.0 and rep.worst == 0.0
    rep = dominance(Y1 + 0.01, Y1, tol_num=0.001)
    assert not rep.verdict and rep.fraction == 0.0 and rep.worst == pytest.approx(0.01)
    assert dominance(Y1 + 0.01, Y1, tol_num=0.02).verdict
    with pytest.raises(ValueError):
        dominance(Y1, Y1[:1])


def test_isometry_examples(paths):
    r = isometry_test(1.0, paths)
    assert r.passed and r.second_moment == pytest.approx(1.0, abs=0.05)
    assert r.expected_second_moment == pytest.approx(1.0, rel=1e-12)
    z = isometry_test(0.0, paths)
    assert z.mean == 0 and z.second_moment == 0 and z.passed
    half = isometry_test(DeterministicFn.indicator(0, 0.5), paths)
    assert half.expected_second_moment == pytest.approx(0.353553, abs=1e-6)
    assert half.passed


def test_battery_is_grid_aligned_and_seeded():
    g = TimeGrid(1.0, 32)
    a = random_step_functions(g, 5, 1)
    b = random_step_functions(g, 5, 1)
    assert all(np.array_equal(f.cells(g), h.cells(g)) for f, h in zip(a, b))


def test_isometry_battery_small(paths):
    res, passed = isometry_battery(paths, count=20, seed=3)
    assert len(res) == 20 and passed >= 19


def test_malliavin_correction_equals_inner_product():
    # two independent routes: symmetric cell Gram vs one-sided primitive
    g = TimeGrid(1.0, 24)
    rng = np.random.default_rng(5)
    f1, f2 = rng.normal(size=(2, 24))
    corr = malliavin_correction(f1, f2, 0.7, g)
    for i in (3, 11, 24):
        assert corr[i] == pytest.approx(inner_product(f1, f2, g.times[i], 0.7, g), rel=1e-10, abs=1e-13)


def test_product_formula_cases(paths):
    one, zero = DeterministicFn.constant(1.0), DeterministicFn.constant(0.0)
    r = product_formula_test(one, one, paths)
    assert r.expected[-1] == pytest.approx(1.0, rel=1e-12) and r.passed
    r0 = product_formula_test(one, zero, paths)
    assert np.all(r0.sample_mean == 0) and r0.max_abs_z == 0
    r2 = product_formula_test(DeterministicFn.indicator(0, 0.5), one, paths)
    assert r2.expected[-1] == pytest.approx(0.5, rel=1e-12) and r2.passed


def test_build_report_keys():
    rep = build_report(1.0, 2.0, [float("nan"), 0.3], dominance(np.zeros(3), np.ones(3)), {"a": 1.0})
    assert set(rep) == {"norm_y", "norm_z", "ratios", "dominance", "z_scores"}
    assert rep["ratios"] == [None, 0.3]
    assert set(rep["dominance"]) == {"fraction", "worst", "verdict"}
