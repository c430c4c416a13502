"""Solver for the non-delayed fractional BSDE with generator g(t, eta_t).

The solution is represented as ``Y_t = u(t, eta_t)``, ``Z_t = sigma_t u_x(t, eta_t)``
where u solves the backward parabolic equation

    u_t + sigma_hat_t sigma_t u_xx + b_t u_x + g(t, x) = 0,   u(T, .) = h.

Since ``sigma_hat sigma = (1/2) d/dt ||sigma||_t^2`` the diffusion is integrated
over each time step exactly as half the increment of ``||sigma||^2``, which
removes the ``t^(2H-1)`` degeneracy at t = 0.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from .diagnostics import WeightedNormParams, node_weights
from .errors import DomainError, DomainTruncationError, InvalidCoefficientError
from .kernel import (FbmModel, FnLike, KernelConstants, TimeGrid, cell_values,
                     node_values, sigma_norm_sq, validate_sigma)
from .sampler import ForwardEnsemble

log = logging.getLogger(__name__)

GH_NODES = 64
_GH_X, _GH_W = hermegauss(GH_NODES)
_GH_W = _GH_W / np.sqrt(2 * np.pi)


class TerminalMap:
    """Terminal function ``h`` with declared polynomial growth degree."""

    def __init__(self, h: Callable, degree: int = 1, smooth: bool = True, label: str = "h"):
        self.h = h
        self.degree = degree
        self.smooth = smooth
        self.label = label

    def __call__(self, x):
        return np.asarray(self.h(np.asarray(x, dtype=float)), dtype=float)

    def __repr__(self):
        return f"TerminalMap({self.label})"

    @classmethod
    def identity(cls):
        return cls(lambda x: x, 1, True, "id")

    @classmethod
    def square(cls):
        return cls(lambda x: x * x, 2, True, "square")

    @classmethod
    def affine(cls, a: float, c: float):
        a, c = float(a), float(c)
        return cls(lambda x: a + c * x, 1, True, f"affine({a!r},{c!r})")

    @classmethod
    def call(cls, k: float):
        k = float(k)
        return cls(lambda x: np.maximum(x - k, 0.0), 1, False, f"call({k!r})")

    @classmethod
    def cosine(cls):
        return cls(np.cos, 0, True, "cos")


def drift_integral(b: FnLike, t, grid: TimeGrid):
    """``int_0^t b ds`` for cell-constant b (partial cells handled exactly)."""
    cb = cell_values(b, grid)
    cum = np.concatenate([[0.0], np.cumsum(cb * grid.dt)])
    t = np.clip(np.asarray(t, dtype=float), 0.0, grid.T)
    j = np.minimum((t / grid.dt).astype(int), grid.N - 1)
    out = cum[j] + cb[j] * (t - j * grid.dt)
    return float(out) if out.ndim == 0 else out


def gaussian_smooth(h: Callable, mean, var) -> np.ndarray:
    """``E h(mean + sqrt(var) xi)`` with 64-node Gauss-Hermite quadrature."""
    mean = np.asarray(mean, dtype=float)
    var = np.broadcast_to(np.asarray(var, dtype=float), mean.shape)
    sd = np.sqrt(np.maximum(var, 0.0))
    vals = np.asarray(h(mean[..., None] + sd[..., None] * _GH_X), dtype=float)
    return vals @ _GH_W


def quasi_expectation(h: Callable, t: float, x, b: FnLike, sigma: FnLike, model: FbmModel):
    """Gaussian smoothing of h over (t, T]: mean ``x + int_t^T b``, variance ``||sigma||_T^2 - ||sigma||_t^2``."""
    grid = model.grid
    var = sigma_norm_sq(sigma, grid.T, model.H, grid) - sigma_norm_sq(sigma, t, model.H, grid)
    x = np.asarray(x, dtype=float)
    if var <= 0:
        out = np.asarray(h(x), dtype=float)
    else:
        shift = drift_integral(b, grid.T, grid) - drift_integral(b, t, grid)
        out = gaussian_smooth(h, x + shift, var)
    return float(out) if out.ndim == 0 else out


@dataclass(eq=False)
class ValueField:
    x: np.ndarray = field(repr=False)
    times: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    ux: np.ndarray = field(repr=False)
    model: FbmModel
    h: TerminalMap
    g: Callable | None = None
    sigma: FnLike = 1.0

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "u", "ux"])
            for i, t in enumerate(self.times):
                for j, xj in enumerate(self.x):
                    w.writerow([repr(float(t)), repr(float(xj)), repr(float(self.u[i, j])),
                                repr(float(self.ux[i, j]))])


def _zero_g(t, x):
    return np.zeros_like(x)


def solve_markovian_pde(h: TerminalMap, g: Callable | None, b: FnLike, sigma: FnLike,
                        model: FbmModel, *, eta0: float = 0.0, J: int = 400,
                        substeps: int = 4, n_sd: float = 6.0,
                        rannacher: bool | None = None) -> ValueField:
    """Crank-Nicolson solve of the backward equation; returns u and u_x on the model time grid.

    ``substeps`` fine steps are taken per model step.  Dirichlet values on
    the two spatial edges come from Gaussian smoothing of h plus the source
    integrated along the drift characteristic.  Non-smooth terminal data
    triggers two damping implicit-Euler steps (Rannacher start).
    """
    grid = model.grid
    validate_sigma(sigma, grid)
    if not isinstance(h, TerminalMap):
        h = TerminalMap(h)
    g = g or _zero_g
    if rannacher is None:
        rannacher = not h.smooth
    M = grid.N * substeps
    tau = np.arange(M + 1) * (grid.T / M)
    V = sigma_norm_sq(sigma, tau, model.H, grid)
    B = drift_integral(b, tau, grid)
    VT = V[-1]
    center = eta0 + B
    x = np.linspace(center.min() - n_sd * np.sqrt(VT), center.max() + n_sd * np.sqrt(VT), J + 1)
    dx = x[1] - x[0]

    u = h(x)
    if not np.all(np.isfinite(u)):
        raise InvalidCoefficientError("terminal map is not finite on the spatial grid")
    G = np.empty((M + 1, J + 1))
    for m in range(M + 1):
        G[m] = np.broadcast_to(np.asarray(g(tau[m], x), dtype=float), x.shape)
    if not np.all(np.isfinite(G)):
        raise InvalidCoefficientError("generator is not finite on the spatial grid")

    edges = np.array([x[0], x[-1]])
    bc = np.empty((M + 1, 2))
    for m in range(M + 1):
        base = gaussian_smooth(h, edges + (B[-1] - B[m]), VT - V[m])
        if m < M:
            chars = edges[None, :] + (B[m:, None] - B[m])
            src = np.array([np.asarray(g(tau[k], chars[k - m]), dtype=float) * np.ones(2)
                            for k in range(m, M + 1)])
            base = base + np.trapezoid(src, tau[m:], axis=0)
        bc[m] = base

    out_u = np.empty((grid.N + 1, J + 1))
    out_u[grid.N] = u
    n_in = J - 1
    for m in range(M - 1, -1, -1):
        A = 0.5 * (V[m + 1] - V[m])
        Bd = B[m + 1] - B[m]
        dtau = tau[m + 1] - tau[m]
        lower = A / dx ** 2 - Bd / (2 * dx)
        diag = -2 * A / dx ** 2
        upper = A / dx ** 2 + Bd / (2 * dx)
        theta = 1.0 if (rannacher and m >= M - 2) else 0.5
        Lu = lower * u[:-2] + diag * u[1:-1] + upper * u[2:]
        if theta == 1.0:
            rhs = u[1:-1] + dtau * G[m, 1:-1]
        else:
            rhs = u[1:-1] + 0.5 * Lu + 0.5 * dtau * (G[m, 1:-1] + G[m + 1, 1:-1])
        rhs[0] += theta * lower * bc[m, 0]
        rhs[-1] += theta * upper * bc[m, 1]
        ab = np.zeros((3, n_in))
        ab[0, 1:] = -theta * upper
        ab[1, :] = 1 - theta * diag
        ab[2, :-1] = -theta * lower
        new = np.empty_like(u)
        new[1:-1] = solve_banded((1, 1), ab, rhs)
        new[0], new[-1] = bc[m]
        u = new
        if m % substeps == 0:
            out_u[m // substeps] = u
    out_u[grid.N] = h(x)
    ux = np.gradient(out_u, x, axis=1, edge_order=2)
    return ValueField(x, grid.times.copy(), out_u, ux, model, h, g, sigma)


@dataclass(eq=False)
class SolutionEnsemble:
    """Per-path (Y, Z) on the extended grid [-delta, T].

    ``driver`` holds the realised generator values on [0, T] (used by the
    energy estimate); ``extrapolated`` counts path evaluations that fell
    outside the spatial domain of a PDE field.
    """

    times: np.ndarray = field(repr=False)
    Y: np.ndarray = field(repr=False)
    Z: np.ndarray = field(repr=False)
    delay_steps: int
    provenance: str
    driver: np.ndarray | None = field(default=None, repr=False)
    extrapolated: int = 0

    @property
    def n_paths(self) -> int:
        return self.Y.shape[0]

    @property
    def k(self) -> int:
        return self.delay_steps

    def on_horizon(self):
        """(times, Y, Z) restricted to [0, T]."""
        k = self.delay_steps
        return self.times[k:], self.Y[:, k:], self.Z[:, k:]

    def to_csv(self, path) -> None:
        write_solution_csv(path, self)


def write_solution_csv(path, sol: SolutionEnsemble) -> None:
    """``path_id,t,Y,Z`` rows, shortest round-trip float formatting."""
    ts = [repr(float(t)) for t in sol.times]
    with open(Path(path), "w", newline="") as fh:
        fh.write("path_id,t,Y,Z\n")
        Y = sol.Y.tolist()
        Z = sol.Z.tolist()
        for p in range(sol.n_paths):
            yp, zp = Y[p], Z[p]
            fh.write("".join(f"{p},{ts[i]},{yp[i]!r},{zp[i]!r}\n" for i in range(len(ts))))


def initial_segment(grid: TimeGrid, phi0: FnLike, psi0: FnLike, n_paths: int):
    """Y, Z values on the k nodes of [-delta, 0)."""
    k = grid.delay_steps
    t = grid.extended_times[:k]
    y = np.broadcast_to(_fn_on(phi0, t), (n_paths, k))
    z = np.broadcast_to(_fn_on(psi0, t), (n_paths, k))
    return y, z


def _fn_on(f: FnLike, t: np.ndarray) -> np.ndarray:
    if callable(f):
        return np.broadcast_to(np.asarray(f(t), dtype=float), t.shape)
    return np.broadcast_to(np.asarray(f, dtype=float), t.shape)


def evaluate_on_paths(fld: ValueField, fwd: ForwardEnsemble, phi0: FnLike = 0.0,
                      psi0: FnLike = 0.0, max_extrapolated: float = 0.01) -> SolutionEnsemble:
    """``Y = u(t, eta_t)`` and ``Z = sigma_t u_x(t, eta_t)`` per path, by cubic interpolation in x."""
    grid = fwd.grid
    if fld.times.shape != grid.times.shape or not np.allclose(fld.times, grid.times):
        raise DomainError("field and ensemble do not share the time grid")
    eta = fwd.values
    n = fwd.n_paths
    sig = node_values(fld.sigma, grid)
    Y = np.empty((n, grid.N + 1))
    Z = np.empty_like(Y)
    D = np.empty_like(Y)
    outside = (eta < fld.x[0]) | (eta > fld.x[-1])
    n_out = int(outside.sum())
    if n_out > max_extrapolated * eta.size:
        raise DomainTruncationError(f"{n_out} of {eta.size} evaluations outside the spatial domain")
    if n_out:
        warnings.warn(f"{n_out} path evaluations extrapolated beyond the spatial domain")
    g = fld.g or _zero_g
    for i in range(grid.N + 1):
        Y[:, i] = CubicSpline(fld.x, fld.u[i])(eta[:, i])
        Z[:, i] = sig[i] * CubicSpline(fld.x, fld.ux[i])(eta[:, i])
        D[:, i] = np.broadcast_to(g(grid.times[i], eta[:, i]), (n,))
    Y[:, -1] = fld.h(eta[:, -1])
    y0, z0 = initial_segment(grid, phi0, psi0, n)
    return SolutionEnsemble(grid.extended_times, np.hstack([y0, Y]), np.hstack([z0, Z]),
                            grid.delay_steps, "pde", driver=D, extrapolated=n_out)


@dataclass(frozen=True)
class AprioriReport:
    lhs: float
    rhs: float
    satisfied: bool
    worst_ratio: float
    lhs_path: np.ndarray = field(repr=False)
    rhs_path: np.ndarray = field(repr=False)


def apriori_estimate_check(sol: SolutionEnsemble, model: FbmModel, constants: KernelConstants,
                           stat_tol: float = 0.05) -> AprioriReport:
    """Both sides of the energy estimate at every grid time t in [0, T].

    lhs(t) = E e^(bt)|Y_t|^2 + (b/2) int_t^T e^(bs) E|Y|^2 + (2/M) int_t^T e^(bs) s^(2H-1) E|Z|^2
    rhs(t) = e^(bT) E|Y_T|^2 + (2/b) int_t^T e^(bs) E|g_s|^2
    """
    beta, M = constants.beta, constants.M
    if beta <= 0:
        raise DomainError("energy estimate needs beta > 0")
    if sol.driver is None:
        raise ValueError("solution carries no generator values")
    times, Y, Z = sol.on_horizon()
    T = times[-1]
    p = 2 * float(model.H) - 1
    mY = np.mean(Y * Y, axis=0)
    mZ = np.mean(Z * Z, axis=0)
    mG = np.mean(sol.driver * sol.driver, axis=0)
    n = len(times)
    lhs = np.empty(n)
    rhs = np.empty(n)
    for i, t in enumerate(times):
        if i == n - 1:
            tail_y = tail_z = tail_g = 0.0
        else:
            wy = node_weights(times, beta, 0.0, t, T)
            wz = node_weights(times, beta, p, t, T)
            tail_y, tail_z, tail_g = wy @ mY, wz @ mZ, wy @ mG
        lhs[i] = np.exp(beta * t) * mY[i] + 0.5 * beta * tail_y + (2.0 / M) * tail_z
        rhs[i] = np.exp(beta * T) * mY[-1] + (2.0 / beta) * tail_g
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
    ok = bool(np.all(lhs <= rhs * (1 + stat_tol)))
    return AprioriReport(float(lhs[0]), float(rhs[0]), ok, float(ratio.max()), lhs, rhs)
