"""Polynomial regression fields on the state (eta_t, eta_{t-delta}).

A field is a polynomial of total degree ``d`` in whitened coordinates
``u = A (x - m)``.  Besides evaluation and gradients it supports exact
Gaussian transport ``x -> E p(x + shift + Xi)`` for a (possibly only
formally) Gaussian ``Xi`` with covariance Q, computed as the terminating
series ``exp(1/2 sum Q_ab d_a d_b) p``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import IllConditionedBasisError


@dataclass(frozen=True)
class RegressionBasis:
    degree: int = 2
    ridge: float = 1e-8
    max_cond: float = 1e12

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("basis degree must be >= 1")
        if not self.ridge > 0:
            raise ValueError("ridge must be > 0")

    def exponents(self, dim: int):
        d = self.degree
        if dim == 1:
            return [(a, 0) for a in range(d + 1)]
        return [(a, b) for a in range(d + 1) for b in range(d + 1 - a)]


class PolyField:
    def __init__(self, coef: np.ndarray, mean: np.ndarray, A: np.ndarray, dim: int):
        self.coef = coef
        self.mean = mean
        self.A = A
        self.dim = dim

    @staticmethod
    def _whitener(X: np.ndarray):
        dim = X.shape[1]
        m = X.mean(axis=0)
        if dim == 1:
            sd = X[:, 0].std()
            return m, np.array([[1.0 / sd if sd > 0 else 1.0]])
        C = np.cov(X, rowvar=False, bias=True)
        try:
            Lc = np.linalg.cholesky(C)
        except np.linalg.LinAlgError as exc:
            raise IllConditionedBasisError("state coordinates are degenerate") from exc
        return m, np.linalg.inv(Lc)

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray, basis: RegressionBasis) -> "PolyField":
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        dim = X.shape[1]
        m, A = cls._whitener(X)
        U = (X - m) @ A.T
        exps = basis.exponents(dim)
        u2 = U[:, 1] if dim == 2 else np.zeros(len(U))
        D = np.column_stack([U[:, 0] ** a * u2 ** b for a, b in exps])
        n = len(y)
        gram = D.T @ D / n
        cond = np.linalg.cond(gram)
        if not cond <= basis.max_cond:
            raise IllConditionedBasisError(f"regression design condition {cond:.3g} exceeds {basis.max_cond:.0e}")
        beta = np.linalg.solve(gram + basis.ridge * np.eye(len(exps)), D.T @ y / n)
        coef = np.zeros((basis.degree + 1, basis.degree + 1))
        for (a, b), c in zip(exps, beta):
            coef[a, b] = c
        return cls(coef, m, A, dim)

    def _u(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        U = (X[:, :self.dim] - self.mean) @ self.A.T
        if self.dim == 1:
            U = np.column_stack([U[:, 0], np.zeros(len(U))])
        return U

    def __call__(self, X) -> np.ndarray:
        U = self._u(X)
        return P.polyval2d(U[:, 0], U[:, 1], self.coef)

    def gradient(self, X) -> np.ndarray:
        """d/dx of the field, shape (n, dim)."""
        U = self._u(X)
        du = np.column_stack([
            P.polyval2d(U[:, 0], U[:, 1], P.polyder(self.coef, axis=0)),
            P.polyval2d(U[:, 0], U[:, 1], P.polyder(self.coef, axis=1)),
        ])[:, :self.dim]
        return du @ self.A

    def transported(self, Q: np.ndarray, shift: np.ndarray) -> "PolyField":
        """Field of ``x -> E p(x + shift + Xi)``, ``Xi`` with (formal) covariance Q."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))[:self.dim, :self.dim]
        shift = np.atleast_1d(np.asarray(shift, dtype=float))[:self.dim]
        Qu = self.A @ Q @ self.A.T
        Q2 = np.zeros((2, 2))
        Q2[:self.dim, :self.dim] = Qu
        out = self.coef.copy()
        term = self.coef.copy()
        k = 1
        while np.any(term):
            term = 0.5 * (Q2[0, 0] * _d(term, 2, 0) + 2 * Q2[0, 1] * _d(term, 1, 1)
                          + Q2[1, 1] * _d(term, 0, 2)) / k
            out = out + term
            k += 1
        return PolyField(out, self.mean - shift, self.A, self.dim)


def _d(c: np.ndarray, n0: int, n1: int) -> np.ndarray:
    out = c
    if n0:
        out = P.polyder(out, n0, axis=0)
    if n1:
        out = P.polyder(out, n1, axis=1)
    pad = np.zeros_like(c)
    pad[:out.shape[0], :out.shape[1]] = out
    return pad
