"""Command line runner: ``run``, ``scenarios`` and ``admissibility``.

Exit codes: 0 success, 2 validation error, 3 numerical error, 4 a
scenario check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
import warnings
from contextlib import nullcontext
from dataclasses import asdict
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from . import config as C
from .delay_solver import (DelayedBsdeProblem, IterationTrace, PicardConfig, admissible_delay,
                           admissible_horizon, lipschitz_probe, solve_comparison_sequence,
                           solve_delayed_picard)
from .diagnostics import (WeightedNormParams, build_report, isometry_battery, product_formula_test,
                          weighted_norm_y, weighted_norm_z)
from .errors import ConfigError, FracBsdeError, InfeasibleError, NumericalError
from .fbsde_core import (SolutionEnsemble, apriori_estimate_check, evaluate_on_paths,
                         solve_markovian_pde, write_solution_csv)
from .kernel import DeterministicFn, FbmModel, KernelConstants, node_values
from .sampler import sample_fbm, simulate_forward, write_ensemble_csv
from .scenarios import SCENARIOS, list_scenarios

log = logging.getLogger("fracbsde")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, (FracBsdeError, ValueError, KeyError, TypeError, OSError)):
        return EXIT_INVALID
    return EXIT_NUMERICAL


def _thread_limit():
    raw = os.environ.get("FRACBSDE_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"FRACBSDE_THREADS must be an integer, got {raw!r}") from exc
    if n < 0:
        raise ConfigError("FRACBSDE_THREADS must be >= 0")
    if n == 0:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


# ------------------------------------------------------------------ pipeline

class Run:
    """One resolved experiment; ``execute`` fills solution, trace, diagnostics and verdicts."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.times = {}
        self.verdicts = {}
        self.diag = {}
        self.solution = None
        self.dominating = None
        self.trace = None
        self.field = None
        self.comparison = None

    def _tick(self, key, t0):
        self.times[key] = time.perf_counter() - t0

    def build(self):
        cfg = self.cfg
        num = C.num
        self.H = num(cfg["H"])
        self.model = FbmModel.build(self.H, num(cfg["T"]), cfg["N"], cfg["delta_steps"])
        self.b = C.build_fn(cfg["b"], "drift")
        self.sigma = C.build_fn(cfg["sigma"], "volatility")
        self.eta0 = num(cfg["eta0"])
        self.solver = C.build_solver(cfg)
        self.problem = self._problem(cfg["h"], cfg["generator"], cfg["phi0"], cfg["psi0"])
        self.problem2 = None
        if "comparison" in cfg:
            c2 = cfg["comparison"]
            self.problem2 = self._problem(c2.get("h", cfg["h"]), c2["generator"],
                                          c2.get("phi0", cfg["phi0"]), c2.get("psi0", cfg["psi0"]))

    def _problem(self, h, gen, phi0, psi0):
        return DelayedBsdeProblem(self.model, self.eta0, self.b, self.sigma, C.build_terminal(h),
                                  C.build_generator(gen, self.H), C.build_fn(phi0, "phi0"),
                                  C.build_fn(psi0, "psi0"))

    def execute(self):
        t_all = time.perf_counter()
        self.build()
        cfg = self.cfg
        t0 = time.perf_counter()
        self.paths = sample_fbm(self.model, cfg["n_paths"], cfg["seed"], cfg["method"])
        self.fwd = simulate_forward(self.eta0, self.b, self.sigma, self.paths)
        self._tick("sample", t0)
        t0 = time.perf_counter()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            self._solve()
        self.warnings = sorted({str(w.message) for w in caught})
        self._tick("solve", t0)
        t0 = time.perf_counter()
        self._diagnose()
        self._tick("diagnose", t0)
        self._check()
        self._tick("total", t_all)
        return self

    def _solve(self):
        s = self.solver
        p = self.problem
        if s.route == "pde":
            gen = p.gen
            if gen.uses_y or gen.uses_z or gen.delayed or self.problem2 is not None:
                raise ConfigError("the pde route needs a generator of (t, x) only and no comparison")
            g = None if gen.label == "zero" else (lambda t, x: gen(t, x, 0.0, 0.0, 0.0, 0.0))
            t0 = time.perf_counter()
            self.field = solve_markovian_pde(p.h, g, self.b, self.sigma, self.model, eta0=self.eta0, J=s.J)
            self.solution = evaluate_on_paths(self.field, self.fwd, p.phi0, p.psi0)
            self.trace = IterationTrace(converged=True, beta=float("nan"))
            self.trace.record(0.0, time.perf_counter() - t0)
        elif self.problem2 is not None:
            cfg2 = PicardConfig(s.picard.tol, s.picard.max_iter, s.picard.basis, s.picard.beta,
                                s.picard.M, "comparison")
            self.dominating, _ = solve_delayed_picard(self.problem2, self.fwd, cfg2)
            t0 = time.perf_counter()
            seq, verdict = solve_comparison_sequence(p, self.problem2, self.fwd, cfg2, dominating=self.dominating)
            self.comparison = verdict
            self.solution = verdict.limit
            self.solution.provenance = "comparison"
            tr = IterationTrace(converged=True, certified=verdict.certified, admissible=verdict.certified)
            per = (time.perf_counter() - t0) / max(len(verdict.distances), 1)
            for d in verdict.distances:
                tr.record(d, per)
            tr.beta = admissible_delay(p.gen.L, self._M(), "comparison")[0] if s.picard.beta is None else s.picard.beta
            self.trace = tr
        else:
            self.solution, self.trace = solve_delayed_picard(p, self.fwd, s.picard)

    def _M(self):
        from .kernel import ratio_bound
        M = self.solver.picard.M
        return M if M is not None else ratio_bound(self.sigma, self.H, self.model.grid)

    def _diagnose(self):
        cfg, sol = self.cfg, self.solution
        beta = self.trace.beta if np.isfinite(self.trace.beta) else admissible_delay(
            self.problem.gen.L, self._M())[0]
        prm = WeightedNormParams(beta, H=self.H)
        z_scores = {}
        d = cfg["diagnostics"]
        if d["isometry_battery"]:
            res, passed = isometry_battery(self.paths, d["isometry_battery"], seed=cfg["seed"])
            z_scores["isometry_passed"] = passed
            z_scores["isometry_count"] = len(res)
            z_scores["isometry_max_abs_z"] = float(max(max(abs(r.z_mean), abs(r.z_second)) for r in res))
        if d["product_cases"]:
            grid = self.model.grid
            one, zero = DeterministicFn.constant(1.0), DeterministicFn.constant(0.0)
            half = DeterministicFn.indicator(0.0, 0.5 * grid.T)
            for name, (f1, f2) in {"ones": (one, one), "one_zero": (one, zero),
                                   "indicator_one": (half, one)}.items():
                z_scores[f"product_{name}"] = product_formula_test(f1, f2, self.paths).max_abs_z
        dom = self.comparison.dominance if self.comparison is not None else None
        rep = build_report(weighted_norm_y(sol.Y, sol.times, prm), weighted_norm_z(sol.Z, sol.times, prm),
                           self.trace.ratios, dom, z_scores)
        rep["beta"] = beta
        rep["trace"] = {"iterations": len(self.trace), "distances": self.trace.distances,
                        "converged": self.trace.converged, "certified": self.trace.certified}
        rep["warnings"] = self.warnings
        rep["lipschitz_probe"] = asdict(lipschitz_probe(self.problem.gen, self.H, self.model.grid.delta, self.model.grid.T,
                                    seed=cfg["seed"] % (2 ** 32)))
        if self.comparison is not None:
            rep["comparison"] = self.comparison.to_dict()
        Mk = C.num(d["apriori_M"])
        ap = []
        sols = [("solution", sol)] + ([("dominating", self.dominating)] if self.dominating is not None else [])
        for label, s in sols:
            for b in d["apriori_betas"]:
                r = apriori_estimate_check(s, self.model, KernelConstants(M=Mk, beta=C.num(b)))
                ap.append({"solution": label, "beta": C.num(b), "M": Mk, "lhs": r.lhs, "rhs": r.rhs,
                           "worst_ratio": r.worst_ratio, "satisfied": r.satisfied})
        rep["apriori"] = ap
        self.diag = rep

    def _check(self):
        cfg, sol, grid = self.cfg, self.solution, self.model.grid
        k = grid.delay_steps
        times, Y, Z = sol.on_horizon()
        out = {}
        for name in cfg["checks"]:
            if name == "y0_equals_eta0":
                out[name] = abs(float(Y[:, 0].mean()) - self.eta0) <= 1e-2 * (1 + abs(self.eta0))
            elif name == "quadratic_closed_form":
                if self.field is None:
                    raise ConfigError("quadratic_closed_form needs the pde route")
                u00 = float(CubicSpline(self.field.x, self.field.u[0])(self.eta0))
                T = grid.T
                out[name] = abs(u00 - (self.eta0 ** 2 + T ** (2 * self.H))) <= 1e-3
                self.diag["u00"] = u00
            elif name == "linear_closed_form":
                a = C.num(cfg["generator"]["linear_y"])
                errs = {}
                for i in (0, grid.N // 2):
                    exact = np.exp(a * (grid.T - times[i])) * self.fwd.values[:, i]
                    errs[repr(float(times[i]))] = float(np.sqrt(np.mean((Y[:, i] - exact) ** 2)
                                                              / np.mean(exact ** 2)))
                self.diag["linear_rel_error"] = errs
                out[name] = max(errs.values()) <= 0.02
            elif name == "one_pass":
                out[name] = len(self.trace) == 1 and self.trace.converged
            elif name == "delay_closed_form":
                out[name] = self._delay_closed_form(times, Y, Z)
            elif name == "contraction":
                r = [x for x in self.trace.ratios if np.isfinite(x)]
                dist = self.trace.distances
                out[name] = (len(r) >= 5 and max(r) <= 0.55
                             and all(b < a for a, b in zip(dist, dist[1:])))
            elif name == "dominance":
                v = self.comparison
                if v is None:
                    raise ConfigError("dominance check needs a comparison block")
                out[name] = bool(v.holds and v.dominance.fraction == 1.0
                                 and all(g <= v.tol_num for g in v.monotone_gaps[:5]))
            elif name == "isometry":
                zs = self.diag["z_scores"]
                out[name] = zs.get("isometry_passed", -1) >= math.ceil(0.99 * zs.get("isometry_count", 0)) \
                    and zs.get("isometry_count", 0) > 0
            elif name == "product":
                vals = [v for key, v in self.diag["z_scores"].items() if key.startswith("product_")]
                out[name] = len(vals) == 3 and max(vals) <= 3.0
            elif name == "apriori":
                out[name] = all(r["satisfied"] for r in self.diag["apriori"])
        self.verdicts = {k2: bool(v) for k2, v in out.items()}

    def _delay_closed_form(self, times, Y, Z) -> bool:
        """Y_t = eta_t + int_t^T f(s, phi0(s - delta)) ds and Z = sigma when every lookup hits the segment."""
        p, grid = self.problem, self.model.grid
        if p.gen.uses_y or p.gen.uses_z or grid.delay_steps < grid.N:
            raise ConfigError("delay_closed_form needs delta >= T and a generator of delayed arguments only")
        lag = times - grid.delta
        one = np.ones_like(times)
        fvals = p.gen(times, 0 * one, 0 * one, 0 * one, p.phi0(lag) * one, p.psi0(lag) * one) * one
        tail = np.concatenate([np.cumsum((0.5 * (fvals[1:] + fvals[:-1]) * np.diff(times))[::-1])[::-1], [0.0]])
        exact = self.fwd.values + tail
        y_err = np.abs((Y - exact).mean(axis=0))
        z_err = np.abs(Z.mean(axis=0) - node_values(self.sigma, grid))
        ok_y = np.all(y_err <= 1e-2 * (1 + np.abs(Y.mean(axis=0))))
        ok_z = np.all(z_err <= 1e-2 * (1 + node_values(self.sigma, grid)))
        self.diag["delay_closed_form_max_error"] = {"Y": float(y_err.max()), "Z": float(z_err.max())}
        return bool(ok_y and ok_z)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())


# ------------------------------------------------------------------ outputs

def _fmt(v) -> str:
    return repr(float(v))


def write_mean_csv(path, sol: SolutionEnsemble, other: SolutionEnsemble | None = None) -> None:
    cols = ["t", "Y_mean", "Y_std", "Z_mean", "Z_std"] + (["Y2_mean"] if other is not None else [])
    Ym, Ys = sol.Y.mean(axis=0), sol.Y.std(axis=0)
    Zm, Zs = sol.Z.mean(axis=0), sol.Z.std(axis=0)
    Y2 = other.Y.mean(axis=0) if other is not None else None
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for i, t in enumerate(sol.times):
            row = [t, Ym[i], Ys[i], Zm[i], Zs[i]] + ([Y2[i]] if Y2 is not None else [])
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_contraction_csv(path, trace: IterationTrace) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("iter,distance,log10_distance,ratio\n")
        for n, (d, r) in enumerate(zip(trace.distances, trace.ratios), 1):
            lg = _fmt(math.log10(d)) if d > 0 else ""
            fh.write(f"{n},{_fmt(d)},{lg},{_fmt(r) if np.isfinite(r) else ''}\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_outputs(run: Run, out_dir: Path) -> None:
    out = run.cfg["outputs"]
    write_solution_csv(out_dir / "solution.csv", run.solution)
    run.trace.to_csv(out_dir / "trace.csv", timings=out["trace_timings"])
    write_mean_csv(out_dir / "Y_mean_vs_t.csv", run.solution, run.dominating)
    write_contraction_csv(out_dir / "contraction.csv", run.trace)
    if run.dominating is not None:
        write_solution_csv(out_dir / "solution_dominating.csv", run.dominating)
    if out["emit_paths"]:
        write_ensemble_csv(out_dir / "paths.csv", run.paths, run.fwd)
    if out["emit_fields"] and run.field is not None:
        run.field.to_csv(out_dir / "field.csv")


def _write_report(out_dir: Path, report: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return raw


def run(config_path, out: str | None = None, seed: int | None = None) -> int:
    """Execute one config file; always writes ``report.json`` when an output dir is known."""
    report = {"config": None, "content_hash": None, "error": None}
    out_dir = Path(out) if out is not None else None
    code = EXIT_OK
    try:
        raw = load_config(config_path)
        if out is not None:
            raw.setdefault("outputs", {})["dir"] = out
        if seed is not None:
            raw["seed"] = int(seed)
        report["config"] = raw
        cfg = C.resolve(raw, SCENARIOS)
        out_dir = Path(cfg["outputs"]["dir"])
        report["config"] = cfg
        report["content_hash"] = C.content_hash(cfg)
        report["scenario"] = cfg.get("scenario")
        with _thread_limit():
            r = Run(cfg).execute()
        out_dir.mkdir(parents=True, exist_ok=True)
        write_outputs(r, out_dir)
        report.update(diagnostics=r.diag, verdicts=r.verdicts, passed=r.passed, wall_times=r.times)
        code = EXIT_OK if r.passed else EXIT_CHECK
        if not r.passed:
            failed = [k for k, v in r.verdicts.items() if not v]
            report["error"] = {"type": "AcceptanceCheckFailure", "message": f"failed checks: {failed}"}
    except Exception as exc:  # noqa: BLE001 - every failure is reported and mapped to an exit code
        code = exit_code_for(exc)
        err = {"type": type(exc).__name__, "message": str(exc)}
        for attr in ("payload", "violated", "pivot"):
            if getattr(exc, attr, None) is not None:
                err[attr] = getattr(exc, attr)
        if getattr(exc, "trace", None) is not None:
            err["trace"] = {"distances": exc.trace.distances, "ratios": exc.trace.ratios}
        report["error"] = err
        log.error("%s: %s", type(exc).__name__, exc)
    report["exit_code"] = code
    if out_dir is None and isinstance(report.get("config"), dict):
        d = report["config"].get("outputs", {}).get("dir")
        out_dir = Path(d) if isinstance(d, str) else None
    if out_dir is not None:
        try:
            _write_report(out_dir, report)
        except OSError as exc:
            log.error("could not write report: %s", exc)
            code = code or EXIT_INVALID
    return code


def admissibility_table(L: float, M: float, H: float, beta: float = 1.1, v: float | None = None,
                        dt: float | None = None) -> dict:
    out = {"L": L, "M": M, "H": H}
    for mode in ("existence", "comparison"):
        b, d = admissible_delay(L, M, mode)
        out[mode] = {"beta": b, "delta_max": d}
    if L == 0:
        out["horizon"] = {"beta": beta, "v": v, "T_max": 1e3, "violated": None}
        return out
    v = v if v is not None else 1.0 / (8 * L * M)
    try:
        T = admissible_horizon(L, M, H, beta, v, dt=dt)
        out["horizon"] = {"beta": beta, "v": v, "T_max": T, "violated": None}
    except InfeasibleError as exc:
        out["horizon"] = {"beta": beta, "v": v, "T_max": None, "violated": exc.violated}
    return out


def _print_table(tab: dict) -> None:
    print(f"L={tab['L']!r} M={tab['M']!r} H={tab['H']!r}")
    print(f"{'mode':<12}{'beta':>14}{'delta_max':>14}")
    for mode in ("existence", "comparison"):
        print(f"{mode:<12}{tab[mode]['beta']:>14.6g}{tab[mode]['delta_max']:>14.6g}")
    h = tab["horizon"]
    T = "infeasible (" + str(h["violated"]) + ")" if h["T_max"] is None else f"{h['T_max']:.6g}"
    v = "n/a" if h["v"] is None else f"{h['v']:.6g}"
    print(f"{'horizon':<12}  beta={h['beta']:.6g} v={v} T_max={T}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracbsde", description="Delayed fractional BSDE experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a JSON experiment config")
    r.add_argument("config")
    r.add_argument("--out")
    r.add_argument("--seed", type=int)
    sub.add_parser("scenarios", help="list built-in scenarios")
    a = sub.add_parser("admissibility", help="print admissible (beta, delta_max, T_max)")
    a.add_argument("--L", type=float, required=True)
    a.add_argument("--M", type=float, required=True)
    a.add_argument("--H", type=float, required=True)
    a.add_argument("--beta", type=float, default=1.1, help="beta for the small-horizon bound")
    a.add_argument("--v", type=float, default=None, help="coupling constant (default 1/(8LM))")
    a.add_argument("--dt", type=float, default=None)
    a.add_argument("--json", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "scenarios":
        for name, desc in list_scenarios():
            print(f"{name}: {desc}")
        return EXIT_OK
    if args.command == "admissibility":
        try:
            tab = admissibility_table(args.L, args.M, args.H, args.beta, args.v, args.dt)
        except FracBsdeError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return exit_code_for(exc)
        if args.json:
            print(json.dumps(_jsonable(tab), indent=2))
        else:
            _print_table(tab)
        return EXIT_OK
    return run(args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
