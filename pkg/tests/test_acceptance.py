"""Acceptance suite: one test per criterion at desk scale (N = 128, 10^4 paths)."""

import json

import numpy as np
import pytest
from scipy.interpolate import CubicSpline

from fracbsde import config as C
from fracbsde.cli import Run, run, write_outputs
from fracbsde.delay_solver import admissible_delay
from fracbsde.fbsde_core import TerminalMap, solve_markovian_pde
from fracbsde.kernel import (DeterministicFn, FbmModel, TimeGrid, inner_product, node_values, ratio_bound,
                             sigma_hat, sigma_norm_sq)
from fracbsde.sampler import fbm_covariance, sample_fbm
from fracbsde.scenarios import SCENARIOS

SEED = 20240601
_RUNS = {}


def scenario(name) -> Run:
    if name not in _RUNS:
        _RUNS[name] = Run(C.resolve({"scenario": name}, SCENARIOS)).execute()
    return _RUNS[name]


def test_criterion_01_fbm_covariance(criterion):
    pairs = np.random.default_rng(7).integers(1, 129, size=(20, 2))
    worst = {}
    for H in (0.6, 0.75, 0.9):
        m = FbmModel.build(H, 1.0, 128)
        X = sample_fbm(m, 10_000, SEED, "cholesky").values
        C_ = fbm_covariance(m.grid, H)
        zs = []
        for i, j in pairs:
            prod = X[:, i] * X[:, j]
            se = prod.std(ddof=1) / np.sqrt(len(prod))
            zs.append(abs(prod.mean() - C_[i, j]) / se)
        worst[H] = max(zs)
    criterion(1, all(z <= 3 for z in worst.values()),
              "max |z| per H " + ", ".join(f"{H}: {z:.2f}" for H, z in worst.items()))


def test_criterion_02_kernel_quadrature(criterion):
    err_one, err_ind = 0.0, 0.0
    for T in (0.5, 1.0, 2.0):
        for H in (0.6, 0.75, 0.9):
            g = TimeGrid(T, 128)
            err_one = max(err_one, abs(inner_product(1.0, 1.0, T, H, g) / T ** (2 * H) - 1))
            for a, b in [(16, 64), (32, 32), (5, 128), (100, 77)]:
                s, u = g.times[a], g.times[b]
                got = inner_product(DeterministicFn.indicator(0, s), DeterministicFn.indicator(0, u), T, H, g)
                cov = 0.5 * (s ** (2 * H) + u ** (2 * H) - abs(s - u) ** (2 * H))
                err_ind = max(err_ind, abs(got - cov) / cov)
    criterion(2, err_one <= 1e-6 and err_ind <= 1e-6,
              f"<1,1> rel err {err_one:.1e}, indicator rel err {err_ind:.1e}")


def test_criterion_03_sigma_hat(criterion):
    sig_err = 0.0
    for H in (0.6, 0.75, 0.9):
        g = TimeGrid(1.0, 128)
        sig_err = max(sig_err, np.max(np.abs(sigma_hat(1.3, g.times, H, g) - 1.3 * H * g.times ** (2 * H - 1))))
    # finite differences resolve the t^(2H-1) start only away from 0
    fd_ok, fd_worst = True, []
    for sig in (DeterministicFn.constant(1.3, "volatility"), DeterministicFn.affine(1.0, 0.5, "volatility")):
        errs = []
        for N in (64, 128, 256):
            g = TimeGrid(1.0, N)
            t = g.times
            V = sigma_norm_sq(sig, t, 0.75, g)
            fd = (V[2:] - V[:-2]) / (2 * g.dt)
            exact = 2 * sigma_hat(sig, t[1:-1], 0.75, g) * sig(t[1:-1])
            e = float(np.max(np.abs(fd - exact)[t[1:-1] >= 0.1]))
            errs.append(e)
            fd_ok &= e <= g.dt
        fd_ok &= errs[2] < errs[0]
        fd_worst.append(max(errs))
    ratio_ok = True
    for H in (0.6, 0.75, 0.9):
        g = TimeGrid(1.0, 128)
        for sig in (1.0, DeterministicFn.affine(1.0, 0.5, "volatility"), DeterministicFn.affine(2.0, -0.2)):
            M = ratio_bound(sig, H, g)
            s = g.times[1:]
            rho = sigma_hat(sig, s, H, g) / (node_values(sig, g)[1:] * s ** (2 * H - 1))
            ratio_ok &= M > 2 and bool(np.all((rho >= 1 / M) & (rho <= M)))
    criterion(3, sig_err <= 1e-8 and fd_ok and ratio_ok,
              f"sigma_hat err {sig_err:.1e}, fd err (t>=0.1) {max(fd_worst):.1e}, ratio bound {ratio_ok}")


def test_criterion_04_isometry(criterion):
    r = scenario("isometry_battery")
    zs = r.diag["z_scores"]
    criterion(4, r.verdicts["isometry"] and zs["isometry_count"] == 100,
              f"{zs['isometry_passed']}/{zs['isometry_count']} within 3, max |z| {zs['isometry_max_abs_z']:.2f}")


def test_criterion_05_product(criterion):
    r = scenario("product_identity")
    zs = {k: v for k, v in r.diag["z_scores"].items() if k.startswith("product_")}
    criterion(5, len(zs) == 3 and max(zs.values()) <= 3,
              "max |z| " + ", ".join(f"{k[8:]}: {v:.2f}" for k, v in zs.items()))


def test_criterion_06_pde_oracle(criterion):
    r = scenario("quadratic_terminal")
    u00 = r.diag["u00"]
    exact = r.model.grid.T ** (2 * r.H)
    # refinement study on the cosine terminal: u(0, 0) = exp(-T^(2H)/2)
    H, errs = 0.75, []
    for N, J in [(16, 50), (32, 100), (64, 200), (128, 400)]:
        fld = solve_markovian_pde(TerminalMap.cosine(), None, 0.0, 1.0, FbmModel.build(H, 1.0, N), J=J)
        errs.append(abs(float(CubicSpline(fld.x, fld.u[0])(0.0)) - np.exp(-0.5)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    criterion(6, abs(u00 - exact) <= 1e-3 and orders.min() >= 1.8,
              f"u(0,0) err {abs(u00 - exact):.1e}, orders {', '.join(f'{o:.3f}' for o in orders)}")


def test_criterion_07_one_pass(criterion):
    r = scenario("delay_ge_T")
    err = r.diag["delay_closed_form_max_error"]
    ok = len(r.trace) == 1 and r.trace.converged and r.verdicts["delay_closed_form"]
    criterion(7, ok, f"iterations {len(r.trace)}, max mean error Y {err['Y']:.1e} Z {err['Z']:.1e}")


def test_criterion_08_contraction(criterion):
    r = scenario("certified_contraction")
    beta, dmax = admissible_delay(0.5, 2.5)
    tr = r.trace
    ratios = [x for x in tr.ratios if np.isfinite(x)]
    d = tr.distances
    ok = (tr.beta == pytest.approx(beta) and r.model.grid.delta <= dmax and len(ratios) >= 5
          and max(ratios) <= 0.55 and all(b < a for a, b in zip(d, d[1:])) and tr.certified)
    criterion(8, ok, f"beta {beta:.4f}, delta {r.model.grid.delta:.4f} <= {dmax:.4f}, "
                     f"{len(ratios)} ratios, max {max(ratios):.3g}")


def test_criterion_09_apriori(criterion):
    worst, bad = 0.0, []
    for name in SCENARIOS:
        for rec in scenario(name).diag["apriori"]:
            assert rec["M"] == 2.5 and rec["beta"] in (1.0, 2.0)
            worst = max(worst, rec["worst_ratio"])
            if not rec["satisfied"]:
                bad.append(f"{name}/{rec['solution']}/beta={rec['beta']}")
    criterion(9, not bad, f"{len(SCENARIOS)} scenarios, worst lhs/rhs {worst:.4f}" + (f", failing {bad}" if bad else ""))


def test_criterion_10_comparison(criterion):
    r = scenario("example43")
    v = r.comparison
    Y2 = r.dominating.Y
    scale = max(1.0, float(np.sqrt(np.mean(Y2 ** 2))))
    ok = (v.tol_num == pytest.approx(1e-3 * scale) and v.dominance.verdict and v.dominance.fraction == 1.0
          and len(v.monotone_gaps) >= 5 and all(g <= v.tol_num for g in v.monotone_gaps[:5]))
    criterion(10, ok, f"dominance {100 * v.dominance.fraction:.1f}% of nodes, "
                      f"max step gap {max(v.monotone_gaps[:5]):.1e} vs tol {v.tol_num:.1e}")


def test_criterion_11_degeneration(criterion):
    r = scenario("h_degeneration_051")
    errs = r.diag["linear_rel_error"]
    criterion(11, r.H == 0.51 and max(errs.values()) <= 0.02,
              "rel error " + ", ".join(f"t={t}: {e:.4f}" for t, e in errs.items()))


def test_criterion_12_reproducible(criterion, tmp_path):
    diffs = []
    for name in SCENARIOS:
        a, b = tmp_path / name / "a", tmp_path / name / "b"
        a.mkdir(parents=True)
        write_outputs(scenario(name), a)
        cfg = tmp_path / f"{name}.json"
        cfg.write_text(json.dumps({"scenario": name, "outputs": {"dir": str(b)}}))
        code = run(cfg)
        if code != 0 or (a / "solution.csv").read_bytes() != (b / "solution.csv").read_bytes():
            diffs.append(name)
    criterion(12, not diffs, f"{len(SCENARIOS)} scenarios byte-identical" if not diffs else f"differ: {diffs}")
