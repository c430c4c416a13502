"""Seeded exact sampling of fBm paths and of the forward process eta.

Every path index owns a deterministic substream spawned from the master
seed, so an ensemble does not depend on how (or in what order) paths are
generated.  Two exact samplers are provided and must agree in law:
a Cholesky factorisation of the path covariance and the Hosking
(Durbin-Levinson) recursion on the stationary increments.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import lapack

from .errors import FactorizationError, NumericalError
from .kernel import (DeterministicFn, FbmModel, FnLike, HurstParam, TimeGrid,
                     cell_values, validate_sigma)


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    model: FbmModel
    n_paths: int
    values: np.ndarray = field(repr=False)
    seed: int
    method: str

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def grid(self) -> TimeGrid:
        return self.model.grid

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)


@dataclass(frozen=True, eq=False)
class ForwardEnsemble:
    eta0: float
    b: FnLike
    sigma: FnLike
    values: np.ndarray = field(repr=False)
    source: PathEnsemble

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def model(self) -> FbmModel:
        return self.source.model

    @property
    def grid(self) -> TimeGrid:
        return self.source.grid

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]


def fbm_covariance(grid: TimeGrid, H: float) -> np.ndarray:
    """``E[B_s B_t] = (s^2H + t^2H - |t-s|^2H)/2`` on the grid nodes."""
    H = HurstParam(H)
    t = grid.times
    p = 2 * H
    return 0.5 * (t[:, None] ** p + t[None, :] ** p - np.abs(t[:, None] - t[None, :]) ** p)


def fgn_autocovariance(n_lags: int, H: float, dt: float) -> np.ndarray:
    """``gamma(k) = (|k+1|^2H - 2|k|^2H + |k-1|^2H)/2 * dt^2H`` for k = 0..n_lags-1."""
    k = np.arange(n_lags, dtype=float)
    p = 2 * float(H)
    return 0.5 * (np.abs(k + 1) ** p - 2 * k ** p + np.abs(k - 1) ** p) * dt ** p


def standard_normals(seed: int, n_paths: int, n: int) -> np.ndarray:
    """One independent substream per path, spawned from ``seed``."""
    children = np.random.SeedSequence(int(seed)).spawn(n_paths)
    out = np.empty((n_paths, n))
    for p, child in enumerate(children):
        out[p] = np.random.Generator(np.random.PCG64(child)).standard_normal(n)
    return out


def _cholesky_lower(cov: np.ndarray) -> np.ndarray:
    L, info = lapack.dpotrf(cov, lower=1, clean=1)
    if info > 0:
        raise FactorizationError(f"covariance not positive definite at pivot {info}", pivot=int(info))
    if info < 0:
        raise NumericalError(f"dpotrf rejected argument {-info}")
    return L


def sample_fbm_cholesky(model: FbmModel, n_paths: int, seed: int) -> PathEnsemble:
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    cov = fbm_covariance(model.grid, model.H)[1:, 1:]
    L = _cholesky_lower(cov)
    eps = standard_normals(seed, n_paths, model.grid.N)
    values = np.zeros((n_paths, model.grid.N + 1))
    values[:, 1:] = eps @ L.T
    return PathEnsemble(model, n_paths, values, int(seed), "cholesky")


def hosking_coefficients(gamma: np.ndarray):
    """Durbin-Levinson recursion.

    Returns the list of prediction coefficient vectors (``coefs[n]`` weighs
    ``X_{n-1}, ..., X_0`` for predicting ``X_n``) and the innovation variances.
    """
    n = len(gamma)
    coefs = [np.zeros(0)]
    var = np.empty(n)
    var[0] = gamma[0]
    phi = np.zeros(0)
    for k in range(1, n):
        if not var[k - 1] > 0:
            raise NumericalError(f"Hosking recursion variance underflow at step {k}")
        kappa = (gamma[k] - phi @ gamma[1:k][::-1]) / var[k - 1]
        phi = np.concatenate([phi - kappa * phi[::-1], [kappa]])
        var[k] = var[k - 1] * (1 - kappa ** 2)
        coefs.append(phi.copy())  # most recent lag first
    if not var[-1] > 0:
        raise NumericalError(f"Hosking recursion variance underflow at step {n - 1}")
    return coefs, var


def sample_fbm_hosking(model: FbmModel, n_paths: int, seed: int) -> PathEnsemble:
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    grid = model.grid
    gamma = fgn_autocovariance(grid.N, model.H, grid.dt)
    coefs, var = hosking_coefficients(gamma)
    eps = standard_normals(seed, n_paths, grid.N)
    X = np.empty((n_paths, grid.N))
    sd = np.sqrt(var)
    X[:, 0] = sd[0] * eps[:, 0]
    for n in range(1, grid.N):
        X[:, n] = X[:, n - 1::-1] @ coefs[n] + sd[n] * eps[:, n]
    values = np.zeros((n_paths, grid.N + 1))
    values[:, 1:] = np.cumsum(X, axis=1)
    return PathEnsemble(model, n_paths, values, int(seed), "hosking")


def sample_fbm(model: FbmModel, n_paths: int, seed: int, method: str = "cholesky") -> PathEnsemble:
    if method == "cholesky":
        return sample_fbm_cholesky(model, n_paths, seed)
    if method == "hosking":
        return sample_fbm_hosking(model, n_paths, seed)
    raise ValueError(f"unknown sampling method {method!r}")


def simulate_forward(eta0: float, b: FnLike, sigma: FnLike, paths: PathEnsemble) -> ForwardEnsemble:
    """``eta_t = eta0 + int_0^t b ds + int_0^t sigma dB^H`` with cell-constant b, sigma."""
    grid = paths.grid
    validate_sigma(sigma, grid)
    cb = cell_values(b, grid)
    cs = cell_values(sigma, grid)
    values = np.empty_like(paths.values)
    values[:, 0] = eta0
    values[:, 1:] = eta0 + np.cumsum(cb * grid.dt) + np.cumsum(paths.increments * cs, axis=1)
    return ForwardEnsemble(float(eta0), b, sigma, values, paths)


def wiener_integral(f: FnLike, paths: PathEnsemble, upto: int | None = None) -> np.ndarray:
    """Per-path ``sum_j f_j (B_{t_j+1} - B_{t_j})`` over the first ``upto`` cells."""
    c = cell_values(f, paths.grid)
    dB = paths.increments
    if upto is not None:
        c, dB = c[:upto], dB[:, :upto]
    return dB @ c


def wiener_integral_process(f: FnLike, paths: PathEnsemble) -> np.ndarray:
    """``X(t_i) = int_0^{t_i} f dB^H`` at every node; shape (n_paths, N+1)."""
    c = cell_values(f, paths.grid)
    out = np.zeros_like(paths.values)
    out[:, 1:] = np.cumsum(paths.increments * c, axis=1)
    return out


def write_ensemble_csv(path, paths: PathEnsemble, forward: ForwardEnsemble | None = None) -> None:
    """Dump ``path_id,t,BH,eta`` row-major by path then time (17 significant digits)."""
    t = paths.grid.times
    eta = forward.values if forward is not None else np.full_like(paths.values, np.nan)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path_id", "t", "BH", "eta"])
        for p in range(paths.n_paths):
            for i in range(len(t)):
                w.writerow([p, f"{t[i]:.17g}", f"{paths.values[p, i]:.17g}", f"{eta[p, i]:.17g}"])
