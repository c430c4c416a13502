import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial.hermite_e import hermegauss

from fracbsde.errors import IllConditionedBasisError
from fracbsde.regression import PolyField, RegressionBasis

GX, GW = hermegauss(20)
GW = GW / np.sqrt(2 * np.pi)


def gauss_expectation(fn, x, Q, shift):
    """Tensor Gauss-Hermite oracle for E fn(x + shift + Xi), Xi ~ N(0, Q) with Q PSD."""
    L = np.linalg.cholesky(Q + 1e-300 * np.eye(2)) if np.all(np.linalg.eigvalsh(Q) > 0) else None
    if L is None:
        w, V = np.linalg.eigh(Q)
        L = V * np.sqrt(np.clip(w, 0, None))
    out = 0.0
    for a, wa in zip(GX, GW):
        for b, wb in zip(GX, GW):
            xi = L @ np.array([a, b])
            out = out + wa * wb * fn(x + shift + xi)
    return out


def test_exact_fit_recovers_polynomial():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(500, 2)) @ np.array([[1.0, 0.0], [0.9, 0.3]])
    p = lambda X: 1 + 2 * X[:, 0] - X[:, 1] + 0.5 * X[:, 0] * X[:, 1] + X[:, 1] ** 2
    fld = PolyField.fit(X, p(X), RegressionBasis(2))
    Xn = rng.normal(size=(20, 2))
    assert np.allclose(fld(Xn), p(Xn), atol=1e-6)
    grad = fld.gradient(Xn)
    assert np.allclose(grad[:, 0], 2 + 0.5 * Xn[:, 1], atol=1e-6)
    assert np.allclose(grad[:, 1], -1 + 0.5 * Xn[:, 0] + 2 * Xn[:, 1], atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), q11=st.floats(0.01, 2.0), corr=st.floats(-0.9, 0.9),
       q22=st.floats(0.01, 2.0), s=st.floats(-1, 1))
def test_transport_matches_gaussian_quadrature(seed, q11, corr, q22, s):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(200, 2))
    coef = rng.normal(size=6)
    exps = RegressionBasis(3).exponents(2)[:6]
    p = lambda Z: sum(c * Z[..., 0] ** a * Z[..., 1] ** b for c, (a, b) in zip(coef, exps))
    fld = PolyField.fit(X, p(X), RegressionBasis(3))
    q12 = corr * np.sqrt(q11 * q22)
    Q = np.array([[q11, q12], [q12, q22]])
    shift = np.array([s, 0.0])
    moved = fld.transported(Q, shift)
    pts = rng.normal(size=(4, 2))
    for x in pts:
        ref = gauss_expectation(lambda z: fld(z[None, :])[0], x, Q, shift)
        assert moved(x[None, :])[0] == pytest.approx(ref, rel=1e-8, abs=1e-8)


def test_transport_with_degenerate_second_coordinate():
    # Q22 = 0: E[x1^2 + x1 x2] under Xi1 ~ var q, cov(Xi1, Xi2) = c adds q + c
    X = np.random.default_rng(1).normal(size=(300, 2))
    fld = PolyField.fit(X, X[:, 0] ** 2 + X[:, 0] * X[:, 1], RegressionBasis(2))
    moved = fld.transported(np.array([[0.3, 0.1], [0.1, 0.0]]), np.zeros(2))
    x = np.array([[0.4, -0.2]])
    # the 1e-8 ridge leaves a bias of that order in the fitted coefficients
    assert moved(x)[0] == pytest.approx(0.16 - 0.08 + 0.3 + 0.1, abs=1e-6)


def test_one_dimensional_field():
    X = np.random.default_rng(2).normal(size=(100, 1))
    fld = PolyField.fit(X, 3 * X[:, 0] ** 2, RegressionBasis(2))
    moved = fld.transported(np.array([[0.5]]), np.array([1.0]))
    assert moved(np.array([[0.0]]))[0] == pytest.approx(3 * (1.0 + 0.5), abs=1e-6)
    assert fld.gradient(np.array([[2.0]]))[0, 0] == pytest.approx(12.0, abs=1e-6)


def test_ill_conditioned_design():
    X = np.ones((50, 1)) * 2.0
    X[0] = 2.0 + 1e-9
    with pytest.raises(IllConditionedBasisError):
        PolyField.fit(X, X[:, 0], RegressionBasis(2))
    Xc = np.random.default_rng(3).normal(size=(50, 1))
    with pytest.raises(IllConditionedBasisError):
        PolyField.fit(np.hstack([Xc, Xc]), Xc[:, 0], RegressionBasis(2))


def test_basis_validation():
    with pytest.raises(ValueError):
        RegressionBasis(0)
    with pytest.raises(ValueError):
        RegressionBasis(2, ridge=0.0)
    assert len(RegressionBasis(2).exponents(2)) == 6
