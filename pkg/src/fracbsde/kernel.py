"""Deterministic analytics of the fBm kernel for H in (1/2, 1).

Functions on [0, T] are handled as piecewise constant on the cells of a
uniform grid (value taken at the cell midpoint).  Every double integral of
the singular kernel ``phi(u - v) = H(2H-1)|u-v|^(2H-2)`` is then evaluated in
closed form cell by cell, through the second antiderivative ``|x|^(2H)/2``
of ``phi``.  This makes the discrete scalar product coincide with the
covariance of the corresponding fBm increments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import ConstantViolationError, DomainError, InvalidCoefficientError

M_FLOOR = 2.0
M_EPS = 1e-6


class HurstParam(float):
    """Hurst exponent restricted to the open interval (1/2, 1)."""

    def __new__(cls, value):
        H = float(value)
        if not 0.5 < H < 1.0:
            raise DomainError(f"Hurst parameter must satisfy 1/2 < H < 1, got {H!r}")
        return super().__new__(cls, H)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i*dt`` on [0, T] with a delay of ``delay_steps`` cells."""

    T: float
    N: int
    delay_steps: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise DomainError(f"horizon T must be positive, got {self.T!r}")
        if int(self.N) != self.N or self.N < 1:
            raise DomainError(f"step count N must be a positive integer, got {self.N!r}")
        if int(self.delay_steps) != self.delay_steps or not 0 <= self.delay_steps <= self.N:
            raise DomainError(f"delay_steps must be an integer in [0, N], got {self.delay_steps!r}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "delay_steps", int(self.delay_steps))

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def delta(self) -> float:
        return self.delay_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt

    @property
    def extended_times(self) -> np.ndarray:
        """Grid on [-delta, T]; the first ``delay_steps`` nodes hold the initial segment."""
        return np.arange(-self.delay_steps, self.N + 1) * self.dt

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.dt

    def index_of(self, t: float) -> int:
        i = int(round(t / self.dt))
        if not np.isclose(i * self.dt, t, rtol=0, atol=1e-9 * max(1.0, self.T)):
            raise DomainError(f"time {t!r} is not on the grid (dt={self.dt!r})")
        return i


@dataclass(frozen=True)
class FbmModel:
    H: HurstParam
    grid: TimeGrid

    def __post_init__(self):
        object.__setattr__(self, "H", HurstParam(self.H))

    @classmethod
    def build(cls, H: float, T: float, N: int, delay_steps: int = 0) -> "FbmModel":
        return cls(HurstParam(H), TimeGrid(T, N, delay_steps))


class DeterministicFn:
    """A deterministic function of time together with its role.

    ``fn`` must accept numpy arrays.  Sampling on a grid gives node values
    (``nodes``) or cell values (``cells``, evaluated at cell midpoints).
    """

    ROLES = ("drift", "volatility", "phi0", "psi0", "test", "terminal")

    def __init__(self, fn: Callable, role: str = "test", label: str | None = None):
        if role not in self.ROLES:
            raise ValueError(f"unknown role {role!r}")
        self.fn = fn
        self.role = role
        self.label = label or getattr(fn, "__name__", "fn")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.asarray(self.fn(t), dtype=float), t.shape).copy()

    def __repr__(self):
        return f"DeterministicFn({self.label}, role={self.role})"

    def nodes(self, grid: TimeGrid) -> np.ndarray:
        return self(grid.times)

    def cells(self, grid: TimeGrid) -> np.ndarray:
        return self(grid.midpoints)

    @classmethod
    def constant(cls, c: float, role: str = "test") -> "DeterministicFn":
        c = float(c)
        return cls(lambda t: np.full(np.shape(t), c), role, f"const({c!r})")

    @classmethod
    def affine(cls, a: float, c: float, role: str = "test") -> "DeterministicFn":
        """``t -> a + c*t``."""
        a, c = float(a), float(c)
        return cls(lambda t: a + c * np.asarray(t), role, f"affine({a!r},{c!r})")

    @classmethod
    def indicator(cls, lo: float, hi: float, role: str = "test") -> "DeterministicFn":
        lo, hi = float(lo), float(hi)
        return cls(lambda t: ((lo <= np.asarray(t)) & (np.asarray(t) <= hi)).astype(float),
                   role, f"1[{lo!r},{hi!r}]")

    @classmethod
    def piecewise_constant(cls, breaks, values, role: str = "test") -> "DeterministicFn":
        """Right-continuous step function: ``values[j]`` on ``[breaks[j], breaks[j+1])``."""
        breaks = np.asarray(breaks, dtype=float)
        values = np.asarray(values, dtype=float)
        if breaks.ndim != 1 or len(breaks) != len(values) + 1:
            raise ValueError("need len(breaks) == len(values) + 1")

        def fn(t):
            j = np.clip(np.searchsorted(breaks, t, side="right") - 1, 0, len(values) - 1)
            return values[j]

        return cls(fn, role, "piecewise")


FnLike = Union[DeterministicFn, Callable, float, np.ndarray]


def cell_values(f: FnLike, grid: TimeGrid) -> np.ndarray:
    """Per-cell values (length N) of a function-like argument."""
    if isinstance(f, DeterministicFn):
        return f.cells(grid)
    if callable(f):
        return np.broadcast_to(np.asarray(f(grid.midpoints), dtype=float), (grid.N,)).copy()
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.N, float(arr))
    if arr.shape == (grid.N,):
        return arr.copy()
    raise ValueError(f"expected {grid.N} cell values, got shape {arr.shape}")


def node_values(f: FnLike, grid: TimeGrid) -> np.ndarray:
    if isinstance(f, DeterministicFn):
        return f.nodes(grid)
    if callable(f):
        return np.broadcast_to(np.asarray(f(grid.times), dtype=float), (grid.N + 1,)).copy()
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.N + 1, float(arr))
    if arr.shape == (grid.N + 1,):
        return arr.copy()
    raise ValueError(f"expected {grid.N + 1} node values, got shape {arr.shape}")


def validate_sigma(sigma: FnLike, grid: TimeGrid) -> None:
    """Raise unless sigma is nonzero with constant sign on nodes and cells."""
    vals = np.concatenate([node_values(sigma, grid), cell_values(sigma, grid)])
    if not np.all(np.isfinite(vals)):
        raise InvalidCoefficientError("sigma has non-finite values on the grid")
    if not (np.all(vals > 0) or np.all(vals < 0)):
        raise InvalidCoefficientError("sigma must be nonzero with constant sign on [0, T]")


@dataclass(frozen=True)
class KernelConstants:
    M: float
    beta: float = 0.0
    L: float = 0.0

    def __post_init__(self):
        if not self.M > M_FLOOR:
            raise ConstantViolationError(f"ratio-bound constant must exceed 2, got M={self.M!r}")
        if self.beta < 0 or self.L < 0:
            raise ConstantViolationError("beta and L must be nonnegative")


def phi_kernel(x, H):
    """``H(2H-1)|x|^(2H-2)``; singular at 0."""
    H = HurstParam(H)
    x = np.asarray(x, dtype=float)
    if np.any(x == 0):
        raise DomainError("phi is singular at x = 0")
    out = H * (2 * H - 1) * np.abs(x) ** (2 * H - 2)
    return float(out) if out.ndim == 0 else out


def cell_gram(lo: np.ndarray, hi: np.ndarray, H: float) -> np.ndarray:
    """Exact ``int_{cell i} int_{cell j} phi(u-v) du dv`` for cells ``[lo, hi]``."""
    p = 2 * float(H)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = lambda a, b: np.abs(a[:, None] - b[None, :]) ** p
    return 0.5 * (d(hi, lo) + d(lo, hi) - d(lo, lo) - d(hi, hi))


def _truncated_edges(grid: TimeGrid, t: float):
    edges = grid.times
    return np.minimum(edges[:-1], t), np.minimum(edges[1:], t)


def _check_t(t: float, grid: TimeGrid, allow_zero: bool) -> float:
    t = float(t)
    if t < 0 or (t == 0 and not allow_zero):
        raise DomainError(f"time must be {'>=' if allow_zero else '>'} 0, got {t!r}")
    if t > grid.T * (1 + 1e-12):
        raise DomainError(f"time {t!r} beyond horizon T={grid.T!r}")
    return min(t, grid.T)


def inner_product(f: FnLike, g: FnLike, t: float, H: float, grid: TimeGrid) -> float:
    """``<f, g>_t = int_0^t int_0^t phi(u-v) f(u) g(v) du dv``."""
    H = HurstParam(H)
    t = _check_t(t, grid, allow_zero=False)
    cf, cg = cell_values(f, grid), cell_values(g, grid)
    lo, hi = _truncated_edges(grid, t)
    keep = hi > lo
    G = cell_gram(lo[keep], hi[keep], H)
    return float(cf[keep] @ G @ cg[keep])


def sigma_norm_sq(sigma: FnLike, t, H: float, grid: TimeGrid):
    """``||sigma||_t^2``; accepts a scalar or an array of times."""
    H = HurstParam(H)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    c = cell_values(sigma, grid)
    out = np.empty(ts.shape)
    for n, tn in enumerate(ts):
        tn = _check_t(tn, grid, allow_zero=True)
        if tn == 0:
            out[n] = 0.0
            continue
        lo, hi = _truncated_edges(grid, tn)
        keep = hi > lo
        out[n] = c[keep] @ cell_gram(lo[keep], hi[keep], H) @ c[keep]
    return float(out[0]) if np.ndim(t) == 0 else out


def kernel_weight(f: FnLike, t, upper, H: float, grid: TimeGrid):
    """``int_0^upper phi(t - v) f(v) dv`` for ``0 <= upper <= t``.

    With ``upper = t`` this is ``sigma_hat``; with ``upper = t - delta`` it is
    the Malliavin weight of a delayed forward value.
    """
    H = HurstParam(H)
    c = cell_values(f, grid)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    us = np.broadcast_to(np.asarray(upper, dtype=float), ts.shape)
    q = 2 * H - 1
    out = np.zeros(ts.shape)
    edges = grid.times
    for n, (tn, un) in enumerate(zip(ts, us)):
        un = min(un, tn)
        if un <= 0:
            continue
        lo = np.minimum(edges[:-1], un)
        hi = np.minimum(edges[1:], un)
        keep = hi > lo
        w = H * (np.maximum(tn - lo[keep], 0) ** q - np.maximum(tn - hi[keep], 0) ** q)
        out[n] = c[keep] @ w
    return float(out[0]) if np.ndim(t) == 0 else out


def sigma_hat(sigma: FnLike, t, H: float, grid: TimeGrid):
    """``int_0^t phi(t - v) sigma(v) dv``; zero at t = 0 by convention."""
    ts = np.asarray(t, dtype=float)
    for tn in np.atleast_1d(ts):
        _check_t(tn, grid, allow_zero=True)
    return kernel_weight(sigma, ts, ts, H, grid)


def ratio_bound(sigma: FnLike, H: float, grid: TimeGrid, eps: float = M_EPS) -> float:
    """Smallest M (floored at 2 + eps) with ``s^(2H-1)/M <= sigma_hat/sigma <= M s^(2H-1)`` on the grid."""
    H = HurstParam(H)
    validate_sigma(sigma, grid)
    s = grid.times[1:]
    rho = sigma_hat(sigma, s, H, grid) / (node_values(sigma, grid)[1:] * s ** (2 * H - 1))
    if np.any(rho <= 0) or not np.all(np.isfinite(rho)):
        raise InvalidCoefficientError("sigma_hat/sigma is not positive on the grid")
    tight = float(np.max(np.maximum(rho, 1.0 / rho)))
    return max(tight, M_FLOOR + eps)
