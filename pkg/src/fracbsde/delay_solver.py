"""Picard solver for fractional BSDEs whose generator sees the delayed pair
``(Y_{t-delta}, Z_{t-delta})``, plus the admissibility constants and the
monotone comparison construction.

Iterates are per-path arrays on the extended grid [-delta, T].  One inner
step freezes the delayed arguments at the previous iterate and runs a
backward sweep.  At every node the current Y is fitted by a polynomial in
the state ``(eta_t, eta_{t-delta})``; the quasi-conditional expectation
over one step is then applied to that polynomial exactly (a Gaussian
transport whose covariance couples the new increment with the already
observed delayed coordinate) and evaluated per path.
"""

from __future__ import annotations

import csv
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import bisect

from .diagnostics import DominanceReport, dominance, weighted_distance, weighted_norm_y, WeightedNormParams
from .errors import (ConstantViolationError, DivergenceError, DomainError, GeneratorError,
                     InfeasibleError, PreconditionError)
from .fbsde_core import SolutionEnsemble, TerminalMap, drift_integral, initial_segment, _fn_on
from .kernel import (FbmModel, FnLike, HurstParam, cell_gram, cell_values, kernel_weight,
                     node_values, ratio_bound, sigma_hat, sigma_norm_sq, validate_sigma)
from .regression import PolyField, RegressionBasis
from .sampler import ForwardEnsemble

log = logging.getLogger(__name__)

MODES = ("existence", "comparison")
T_CAP = 1e3


# ---------------------------------------------------------------- generators

@dataclass(frozen=True, eq=False)
class GeneratorSpec:
    """Vectorised generator ``f(t, x, y, z, y_delay, z_delay)`` with dependency flags."""

    f: Callable
    uses_y: bool = False
    uses_z: bool = False
    uses_y_delay: bool = False
    uses_z_delay: bool = False
    L: float = 0.0
    monotone_in_y_delay: bool | None = None
    label: str = "f"

    def __post_init__(self):
        if not self.L >= 0:
            raise ConstantViolationError("Lipschitz constant must be >= 0")

    def __call__(self, t, x, y, z, yd, zd):
        return self.f(t, x, y, z, yd, zd)

    @property
    def delayed(self) -> bool:
        return self.uses_y_delay or self.uses_z_delay

    @classmethod
    def zero(cls):
        return cls(lambda t, x, y, z, yd, zd: np.zeros_like(np.asarray(x, dtype=float)), label="zero")

    @classmethod
    def constant(cls, c: float):
        c = float(c)
        return cls(lambda t, x, y, z, yd, zd: np.full_like(np.asarray(x, dtype=float), c),
                   label=f"const({c!r})")

    @classmethod
    def linear_y(cls, a: float):
        a = float(a)
        return cls(lambda t, x, y, z, yd, zd: a * y, uses_y=True, L=a * a, label=f"linear_y({a!r})")

    @classmethod
    def linear_delay(cls, a: float, c: float = 0.0):
        """``a * y_delay + c``."""
        a, c = float(a), float(c)
        return cls(lambda t, x, y, z, yd, zd: a * yd + c, uses_y_delay=True, L=a * a,
                   monotone_in_y_delay=a >= 0, label=f"linear_delay({a!r},{c!r})")

    @classmethod
    def example_pair_member(cls, H: float, shift: float):
        """``y + t^(2H-1) z + y_delay + shift``; Lipschitz constant 3 for T <= 1."""
        q = 2 * float(HurstParam(H)) - 1
        shift = float(shift)
        return cls(lambda t, x, y, z, yd, zd: y + np.asarray(t, dtype=float) ** q * z + yd + shift,
                   uses_y=True, uses_z=True, uses_y_delay=True, L=3.0, monotone_in_y_delay=True,
                   label=f"y+t^q z+y_delay{shift:+g}")


@dataclass(frozen=True)
class LipschitzReport:
    min_L: float
    declared_L: float
    holds: bool
    degenerate_at_delay: bool
    degenerate_at_zero: bool


def lipschitz_probe(gen: GeneratorSpec, H: float, delta: float, T: float, n_probes: int = 2000,
             seed: int = 0, scale: float = 2.0, rtol: float = 1e-9) -> LipschitzReport:
    """Smallest L with ``|df|^2 <= L(|dy|^2 + t^q|dz|^2 + |dyd|^2 + |t-delta|^q|dzd|^2)`` on random pairs.

    Separately probes the points where a weight vanishes (t = 0 for z and
    t = delta for z_delay); a nonzero response there needs an unbounded L.
    """
    q = 2 * float(HurstParam(H)) - 1
    rng = np.random.default_rng(seed)
    n = n_probes
    t = rng.uniform(0, T, n)
    x = rng.normal(0, scale, n)
    a = rng.normal(0, scale, (2, 4, n))
    (y1, z1, yd1, zd1), (y2, z2, yd2, zd2) = a
    df = np.asarray(gen(t, x, y1, z1, yd1, zd1) - gen(t, x, y2, z2, yd2, zd2), dtype=float)
    den = (y1 - y2) ** 2 + t ** q * (z1 - z2) ** 2 + (yd1 - yd2) ** 2 + np.abs(t - delta) ** q * (zd1 - zd2) ** 2
    min_L = float(np.max(df ** 2 / den))

    def responds(tt, which):
        zeros = np.zeros(64)
        base = [zeros, zeros, zeros, zeros]
        bumped = list(base)
        bumped[which] = rng.normal(0, scale, 64)
        tt = np.full(64, tt)
        xx = rng.normal(0, scale, 64)
        return bool(np.any(np.abs(gen(tt, xx, *bumped) - gen(tt, xx, *base)) > 0))

    deg_delay = bool(0 < delta <= T and responds(delta, 3))
    deg_zero = responds(0.0, 1)
    holds = min_L <= gen.L * (1 + rtol) + rtol and not deg_delay and not deg_zero
    return LipschitzReport(min_L, float(gen.L), holds, deg_delay, deg_zero)


# ------------------------------------------------------------ admissibility

def admissible_delay(L: float, M: float, mode: str = "existence"):
    """``(beta, delta_max)`` with ``beta = c L M e + 4/M`` (c = 2 or 8) and ``delta_max = 1/beta``."""
    if not L >= 0:
        raise ConstantViolationError("L must be >= 0")
    if not M > 2:
        raise ConstantViolationError(f"M must exceed 2, got {M!r}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    c = 2.0 if mode == "existence" else 8.0
    beta = c * L * M * math.e + 4.0 / M
    return beta, 1.0 / beta


def horizon_inequalities(T: float, L: float, M: float, H: float, beta: float, v: float):
    """Left sides of the two small-horizon conditions (each must be < 1/4)."""
    a = 2 - 2 * float(H)
    growth = math.exp(beta * T) if beta * T < 700 else math.inf
    g1 = 8 * L ** 3 / v * M * growth * (T + 2 * T ** a / a) ** 2
    g2 = L * M * v * growth
    return g1, g2


def admissible_horizon(L: float, M: float, H: float, beta: float, v: float,
                       dt: float | None = None, cap: float = T_CAP) -> float:
    """Largest T (capped) satisfying both small-horizon inequalities strictly.

    Both left sides increase in T, so the boundary is found by bisection on
    log T.  With ``dt`` the answer is rounded down to a whole number of steps.
    """
    H = HurstParam(H)
    if not L > 0:
        raise ConstantViolationError("L must be > 0")
    if not M > 2:
        raise ConstantViolationError(f"M must exceed 2, got {M!r}")
    if not beta > 1:
        raise ConstantViolationError("beta must exceed 1")
    if not v > 0:
        raise ConstantViolationError("v must be > 0")

    def at(T):
        g1, g2 = horizon_inequalities(T, L, M, H, beta, v)
        return max(g1, g2) - 0.25

    def excess(logT):
        return at(math.exp(logT))

    floor = dt if dt is not None else 1e-300
    lo, hi = math.log(floor), math.log(cap)
    if excess(lo) >= 0:
        g1, g2 = horizon_inequalities(floor, L, M, H, beta, v)
        which = "horizon" if g1 >= 0.25 else "v-coupling"
        if g2 >= 0.25 and g1 >= 0.25:
            which = "both"
        raise InfeasibleError(f"no feasible horizon above {floor:g} "
                              f"(lhs values {g1:.3g}, {g2:.3g} vs 1/4)", violated=which)
    if at(cap) < 0:
        return float(cap)
    root = bisect(excess, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    T = math.exp(root)
    while at(T) >= 0:
        T = math.nextafter(T, 0.0)
    if dt is not None:
        T = math.floor(T / dt * (1 + 1e-12)) * dt
        while T >= dt and at(T) >= 0:
            T -= dt
        if T < dt:
            raise InfeasibleError("no feasible horizon of at least one grid step", violated="grid")
    return float(T)


# ------------------------------------------------------------------ problem

@dataclass(eq=False)
class DelayedBsdeProblem:
    model: FbmModel
    eta0: float
    b: FnLike
    sigma: FnLike
    h: TerminalMap
    gen: GeneratorSpec
    phi0: FnLike = 0.0
    psi0: FnLike = 0.0

    def __post_init__(self):
        grid = self.model.grid
        validate_sigma(self.sigma, grid)
        if self.gen.delayed and grid.delay_steps < 1:
            raise DomainError("a delayed generator needs delta >= one grid step")
        seg = grid.extended_times[:grid.delay_steps]
        for name, fn in (("phi0", self.phi0), ("psi0", self.psi0)):
            if not np.all(np.isfinite(_fn_on(fn, seg))):
                raise DomainError(f"{name} is not finite on the initial segment")

    @property
    def grid(self):
        return self.model.grid

    @property
    def frozen_consulted(self) -> bool:
        """Whether any delayed lookup on [0, T) lands at or after time 0."""
        return self.gen.delayed and self.grid.delay_steps < self.grid.N


@dataclass(frozen=True, eq=False)
class _StepData:
    """Per-grid quantities shared by all inner steps of one problem."""

    dV: np.ndarray       # ||sigma||^2 increments per cell
    dB: np.ndarray       # drift integral per cell
    q12: np.ndarray      # covariance of the new increment with eta_{t_{i+1}-delta}
    sig: np.ndarray      # sigma at nodes
    ratio: np.ndarray    # r_t / sigma_hat_t at nodes (0 when t <= delta)
    use_x2: bool


def _prepare(problem: DelayedBsdeProblem) -> _StepData:
    grid = problem.grid
    H = problem.model.H
    N, k = grid.N, grid.delay_steps
    t = grid.times
    V = sigma_norm_sq(problem.sigma, t, H, grid)
    dB = np.diff(drift_integral(problem.b, t, grid))
    sig = node_values(problem.sigma, grid)
    use_x2 = problem.frozen_consulted
    q12 = np.zeros(N)
    ratio = np.zeros(N + 1)
    if use_x2:
        c = cell_values(problem.sigma, grid)
        G = cell_gram(t[:-1], t[1:], H)
        cum = np.cumsum(G * c[None, :], axis=1)  # cum[i, j] = sum_{l<=j} G[i,l] c_l
        for i in range(N):
            m = i + 1 - k  # cells strictly before t_{i+1} - delta
            if m >= 1:
                q12[i] = c[i] * cum[i, m - 1]
        upper = t - grid.delta
        pos = upper > 0
        r = kernel_weight(problem.sigma, t[pos], upper[pos], H, grid)
        ratio[pos] = r / sigma_hat(problem.sigma, t[pos], H, grid)
    return _StepData(np.diff(V), dB, q12, sig, ratio, use_x2)


def _state(eta: np.ndarray, i: int, k: int, use_x2: bool) -> np.ndarray:
    if use_x2 and i - k >= 1:
        return np.column_stack([eta[:, i], eta[:, i - k]])
    return eta[:, i][:, None]


def _z_from_gradient(grad: np.ndarray, sig: float, ratio: float) -> np.ndarray:
    z = grad[:, 0].copy()
    if grad.shape[1] == 2:
        z += ratio * grad[:, 1]
    return sig * z


def _eval_generator(gen, t, x, y, z, yd, zd):
    val = np.asarray(gen(t, x, y, z, yd, zd), dtype=float)
    val = np.broadcast_to(val, x.shape)
    bad = ~np.isfinite(val)
    if bad.any():
        j = int(np.argmax(bad))
        payload = {"t": float(t), "x": float(x[j]), "y": float(y[j]), "z": float(z[j]),
                   "y_delay": float(yd[j]), "z_delay": float(zd[j]), "value": float(val[j])}
        raise GeneratorError(f"generator {gen.label} returned a non-finite value at t={t:g}", payload)
    return val


def zero_iterate(problem: DelayedBsdeProblem, n_paths: int) -> SolutionEnsemble:
    """(0, 0) on [0, T] extended by the initial segments."""
    grid = problem.grid
    y0, z0 = initial_segment(grid, problem.phi0, problem.psi0, n_paths)
    zeros = np.zeros((n_paths, grid.N + 1))
    return SolutionEnsemble(grid.extended_times, np.hstack([y0, zeros]), np.hstack([z0, zeros]),
                            grid.delay_steps, "zero")


def inner_step(problem: DelayedBsdeProblem, frozen: SolutionEnsemble, fwd: ForwardEnsemble,
               basis: RegressionBasis = RegressionBasis(), _data: _StepData | None = None) -> SolutionEnsemble:
    """One backward sweep with the delayed arguments read from ``frozen``."""
    grid = problem.grid
    if fwd.grid != grid:
        raise DomainError("forward ensemble and problem do not share the grid")
    N, k, dt = grid.N, grid.delay_steps, grid.dt
    n = fwd.n_paths
    if frozen.Y.shape != (n, N + 1 + k):
        raise DomainError(f"frozen iterate has shape {frozen.Y.shape}, expected {(n, N + 1 + k)}")
    data = _data or _prepare(problem)
    eta = fwd.values
    t = grid.times
    gen = problem.gen
    # frozen.Y[:, i] is the value at t_i - delta on the extended grid
    fY, fZ = frozen.Y, frozen.Z

    Y = np.empty((n, N + 1))
    Z = np.empty_like(Y)
    D = np.empty_like(Y)
    Y[:, N] = problem.h(eta[:, N])
    X = _state(eta, N, k, data.use_x2)
    fld = PolyField.fit(X, Y[:, N], basis)
    Z[:, N] = _z_from_gradient(fld.gradient(X), data.sig[N], data.ratio[N])
    D[:, N] = _eval_generator(gen, t[N], eta[:, N], Y[:, N], Z[:, N], fY[:, N], fZ[:, N])

    for i in range(N - 1, -1, -1):
        E = fld.transported(np.array([[data.dV[i], data.q12[i]], [data.q12[i], 0.0]]),
                            np.array([data.dB[i], 0.0]))
        Xe = np.column_stack([eta[:, i], eta[:, i + 1 - k]]) if fld.dim == 2 else eta[:, i][:, None]
        y = E(Xe)
        z = _z_from_gradient(E.gradient(Xe), data.sig[i], data.ratio[i])
        val = _eval_generator(gen, t[i], eta[:, i], y, z, fY[:, i], fZ[:, i])
        Y[:, i] = y + val * dt
        Z[:, i] = z
        D[:, i] = val
        if i > 0:
            X = _state(eta, i, k, data.use_x2)
            fld = PolyField.fit(X, Y[:, i], basis)

    y0, z0 = initial_segment(grid, problem.phi0, problem.psi0, n)
    return SolutionEnsemble(grid.extended_times, np.hstack([y0, Y]), np.hstack([z0, Z]), k,
                            "inner_step", driver=D)


# ------------------------------------------------------------------- Picard

@dataclass
class IterationTrace:
    distances: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    converged: bool = False
    certified: bool = False
    admissible: bool = False
    beta: float = float("nan")
    M: float = float("nan")

    def record(self, d: float, sec: float) -> None:
        if not d >= 0:
            raise ValueError("distance must be >= 0")
        prev = self.distances[-1] if self.distances else None
        if prev is None:
            r = float("nan")
        elif prev == 0:
            r = 0.0 if d == 0 else float("inf")
        else:
            r = d / prev
        self.distances.append(float(d))
        self.ratios.append(float(r))
        self.seconds.append(float(sec))

    def __len__(self):
        return len(self.distances)

    def to_csv(self, path, timings: bool = True) -> None:
        """``iter,distance,ratio,seconds``; without timings the seconds column is left empty."""
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "distance", "ratio", "seconds"])
            for n, (d, r, s) in enumerate(zip(self.distances, self.ratios, self.seconds), 1):
                w.writerow([n, repr(d), repr(r) if np.isfinite(r) else "", repr(s) if timings else ""])


@dataclass(frozen=True)
class PicardConfig:
    tol: float = 1e-6
    max_iter: int = 50
    basis: RegressionBasis = RegressionBasis()
    beta: float | None = None
    M: float | None = None
    mode: str = "existence"
    horizon_v: float | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


def _constants(problem: DelayedBsdeProblem, config: PicardConfig):
    grid = problem.grid
    M = config.M if config.M is not None else ratio_bound(problem.sigma, problem.model.H, grid)
    beta_adm, delta_max = admissible_delay(problem.gen.L, M, config.mode)
    beta = config.beta if config.beta is not None else beta_adm
    admissible = grid.delta <= delta_max * (1 + 1e-12)
    if not admissible and config.horizon_v is not None and problem.gen.L > 0 and beta > 1:
        try:
            admissible = grid.T <= admissible_horizon(problem.gen.L, M, problem.model.H, beta,
                                                      config.horizon_v)
        except InfeasibleError:
            admissible = False
    return M, beta, admissible


def iterate_distance(a: SolutionEnsemble, b: SolutionEnsemble, beta: float, H: float) -> float:
    return weighted_distance(a.Y, a.Z, b.Y, b.Z, a.times, beta, H)


def solve_delayed_picard(problem: DelayedBsdeProblem, fwd: ForwardEnsemble,
                         config: PicardConfig = PicardConfig(), start: SolutionEnsemble | None = None):
    """Picard iteration of ``inner_step`` from (0, 0); returns (solution, trace)."""
    M, beta, admissible = _constants(problem, config)
    trace = IterationTrace(admissible=admissible, beta=beta, M=M)
    if not admissible:
        warnings.warn(f"delta={problem.grid.delta:g} is outside the certified range; "
                      "the solve is not certified")
    H = problem.model.H
    data = _prepare(problem)
    prev = start if start is not None else zero_iterate(problem, fwd.n_paths)
    tol_abs = None
    for it in range(1, config.max_iter + 1):
        t0 = time.perf_counter()
        cur = inner_step(problem, prev, fwd, config.basis, data)
        if it == 1 and not problem.frozen_consulted:
            # the map ignores its argument: the first image is the fixed point
            d = 0.0
        else:
            d = iterate_distance(cur, prev, beta, H)
        trace.record(d, time.perf_counter() - t0)
        if tol_abs is None:
            tol_abs = config.tol * (1 + weighted_norm_y(cur.Y, cur.times, WeightedNormParams(beta)))
        log.debug("picard iteration %d distance %.3e", it, d)
        prev = cur
        if d < tol_abs:
            trace.converged = True
            break
    if not trace.converged:
        last = trace.distances[-3:]
        if len(last) == 3 and last[0] <= last[1] <= last[2]:
            raise DivergenceError(f"no convergence in {config.max_iter} iterations", trace)
        warnings.warn(f"Picard iteration stopped at max_iter={config.max_iter} above tolerance")
    finite = [r for r in trace.ratios if np.isfinite(r)]
    trace.certified = admissible and trace.converged and (not finite or finite[-1] <= 0.5)
    prev.provenance = "picard"
    return prev, trace


# -------------------------------------------------------------- comparison

@dataclass(frozen=True, eq=False)
class ProbeSet:
    """Probe points (t, x, y, z) and sorted levels for the delayed argument."""

    points: np.ndarray
    yd_levels: np.ndarray

    @classmethod
    def from_iterate(cls, sol: SolutionEnsemble, fwd: ForwardEnsemble, n_q: int = 7):
        qs = np.linspace(0, 1, n_q)
        _, Y, Z = sol.on_horizon()
        grid = fwd.grid
        tq = np.quantile(grid.times, qs)
        xq = np.quantile(fwd.values, qs)
        yq = np.quantile(Y, qs)
        zq = np.quantile(Z, qs)
        pts = np.array(np.meshgrid(tq, xq, yq, zq, indexing="ij")).reshape(4, -1).T
        ydq = np.unique(np.quantile(sol.Y, np.linspace(0, 1, 2 * n_q)))
        return cls(pts, ydq)

    @classmethod
    def default(cls, T: float, span: float = 3.0, n: int = 7):
        g = np.linspace(-span, span, n)
        pts = np.array(np.meshgrid(np.linspace(0, T, n), g, g, g, indexing="ij")).reshape(4, -1).T
        return cls(pts, np.linspace(-span, span, 2 * n))

    def evaluate(self, gen: GeneratorSpec) -> np.ndarray:
        """Generator values with shape (n_points, n_levels); z_delay set to 0."""
        t, x, y, z = self.points.T
        out = np.empty((len(t), len(self.yd_levels)))
        for j, yd in enumerate(self.yd_levels):
            out[:, j] = np.broadcast_to(gen(t, x, y, z, np.full_like(x, yd), np.zeros_like(x)), x.shape)
        return out


def check_monotone(gen: GeneratorSpec, probes: ProbeSet, atol: float = 1e-12) -> bool:
    """True iff f is non-decreasing in y_delay across every probe point."""
    F = probes.evaluate(gen)
    scale = max(1.0, float(np.max(np.abs(F))))
    return bool(np.all(np.diff(F, axis=1) >= -atol * scale))


@dataclass
class ComparisonVerdict:
    dominance: DominanceReport
    tol_num: float
    monotone_gaps: list
    step_violation_fractions: list
    distances: list
    cross_check_max_diff: float | None
    preconditions: dict
    certified: bool
    limit: SolutionEnsemble | None = field(default=None, repr=False)

    @property
    def comparison_failure(self) -> bool:
        return any(f > 1e-3 for f in self.step_violation_fractions)

    @property
    def holds(self) -> bool:
        return self.dominance.verdict and not self.comparison_failure

    def to_dict(self) -> dict:
        return {
            "dominance": self.dominance.to_dict(),
            "tol_num": self.tol_num,
            "monotone_gaps": self.monotone_gaps,
            "step_violation_fractions": self.step_violation_fractions,
            "distances": self.distances,
            "cross_check_max_diff": self.cross_check_max_diff,
            "preconditions": self.preconditions,
            "certified": self.certified,
            "comparison_failure": self.comparison_failure,
        }


def comparison_preconditions(p1: DelayedBsdeProblem, p2: DelayedBsdeProblem, probes: ProbeSet,
                             x_probe: np.ndarray) -> dict:
    grid = p1.grid
    seg = grid.extended_times[:grid.delay_steps]
    F1, F2 = probes.evaluate(p1.gen), probes.evaluate(p2.gen)
    scale = max(1.0, float(np.max(np.abs(F2))))
    return {
        "monotone": check_monotone(p1.gen, probes),
        "terminal_ordered": bool(np.all(p1.h(x_probe) <= p2.h(x_probe))),
        "phi_ordered": bool(np.all(_fn_on(p1.phi0, seg) <= _fn_on(p2.phi0, seg))),
        "generator_ordered": bool(np.all(F1 <= F2 + 1e-12 * scale)),
        # recorded only: the comparison equation carries no Z-delay term
        "psi_ordered": bool(np.all(_fn_on(p1.psi0, seg) <= _fn_on(p2.psi0, seg))),
    }


def solve_comparison_sequence(problem1: DelayedBsdeProblem, problem2: DelayedBsdeProblem,
                              fwd: ForwardEnsemble, config: PicardConfig = PicardConfig(mode="comparison"),
                              dominating: SolutionEnsemble | None = None, tol_num: float | None = None,
                              min_iter: int = 5, cross_check: bool = True):
    """Monotone sequence ``Y~_n`` started from the dominating solution ``Y~_0 = Y_2``.

    Each step solves problem 1 with its delayed argument frozen at the
    previous term.  Returns the list of Y arrays and a ComparisonVerdict.
    """
    if problem1.grid != problem2.grid:
        raise DomainError("problems do not share the grid")
    if problem1.gen.uses_z_delay:
        raise PreconditionError("the comparison construction needs a generator free of z_delay")
    cfg = PicardConfig(config.tol, config.max_iter, config.basis, config.beta, config.M,
                       "comparison", config.horizon_v)
    if dominating is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            dominating, _ = solve_delayed_picard(problem2, fwd, cfg)
    probes = ProbeSet.from_iterate(dominating, fwd)
    x_probe = np.unique(np.concatenate([np.quantile(fwd.values[:, -1], np.linspace(0, 1, 41)),
                                        np.linspace(fwd.values.min(), fwd.values.max(), 41)]))
    pre = comparison_preconditions(problem1, problem2, probes, x_probe)
    failed = [k for k in ("monotone", "terminal_ordered", "phi_ordered", "generator_ordered") if not pre[k]]
    if failed:
        raise PreconditionError(f"comparison preconditions violated: {', '.join(failed)}")
    M, beta, admissible = _constants(problem1, cfg)
    if not admissible:
        warnings.warn("delta is outside the certified comparison range")
    H = problem1.model.H
    Y2 = dominating.Y
    if tol_num is None:
        tol_num = 1e-3 * max(1.0, float(np.sqrt(np.mean(Y2 ** 2))))
    data = _prepare(problem1)
    seq = [Y2]
    prev = dominating
    gaps, fracs, dists = [], [], []
    tol_abs = cfg.tol * (1 + weighted_norm_y(Y2, dominating.times, WeightedNormParams(beta)))
    for it in range(1, cfg.max_iter + 1):
        cur = inner_step(problem1, prev, fwd, cfg.basis, data)
        diff = cur.Y - prev.Y
        gaps.append(float(diff.max()))
        fracs.append(float(np.mean(diff > tol_num)))
        d = iterate_distance(cur, prev, beta, H)
        dists.append(d)
        seq.append(cur.Y)
        prev = cur
        if it >= min_iter and d < tol_abs:
            break
    dom = dominance(prev.Y, Y2, tol_num)
    cross = None
    if cross_check:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            direct, _ = solve_delayed_picard(problem1, fwd, cfg)
        cross = float(np.max(np.abs(direct.Y - prev.Y)))
    verdict = ComparisonVerdict(dom, float(tol_num), gaps, fracs, dists, cross, pre, admissible, prev)
    return seq, verdict
