"""Experiment configuration: JSON schema, scenario merge and object builders."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

import jsonschema
import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .delay_solver import GeneratorSpec, PicardConfig
from .errors import ConfigError
from .fbsde_core import TerminalMap
from .kernel import DeterministicFn
from .regression import RegressionBasis

DECIMAL = r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$"
NUM = {"oneOf": [{"type": "number"}, {"type": "string", "pattern": DECIMAL}]}
INT = {"type": "integer"}
PAIR = {"type": "array", "items": NUM, "minItems": 2, "maxItems": 2}

FN_PRESET = {"oneOf": [
    NUM,
    {"type": "object", "properties": {"const": NUM}, "required": ["const"], "additionalProperties": False},
    {"type": "object", "properties": {"affine": PAIR}, "required": ["affine"], "additionalProperties": False},
]}

H_PRESET = {"oneOf": [
    {"enum": ["id", "square", "cos"]},
    {"type": "object", "properties": {"call": NUM}, "required": ["call"], "additionalProperties": False},
    {"type": "object", "properties": {"affine": PAIR}, "required": ["affine"], "additionalProperties": False},
]}

TABLE_AXES = ["t", "x", "y", "z", "y_delay", "z_delay"]

GEN_PRESET = {"oneOf": [
    {"enum": ["zero", "example43_minus", "example43_plus"]},
    {"type": "object", "properties": {"const": NUM, "L": NUM},
     "required": ["const"], "additionalProperties": False},
    {"type": "object", "properties": {"linear_delay": NUM, "shift": NUM, "L": NUM},
     "required": ["linear_delay"], "additionalProperties": False},
    {"type": "object", "properties": {"linear_y": NUM, "L": NUM},
     "required": ["linear_y"], "additionalProperties": False},
    {"type": "object", "required": ["table"], "additionalProperties": False, "properties": {
        "table": {"type": "object", "required": ["axes", "values", "L"], "additionalProperties": False,
                  "properties": {
                      "axes": {"type": "object", "minProperties": 1, "additionalProperties": False,
                               "properties": {a: {"type": "array", "items": NUM, "minItems": 2}
                                              for a in TABLE_AXES}},
                      "values": {"type": "array"},
                      "L": NUM,
                      "monotone_in_y_delay": {"type": "boolean"},
                  }}}},
]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "scenario": {"type": "string"},
        "description": {"type": "string"},
        "H": NUM,
        "T": NUM,
        "N": {"type": "integer", "minimum": 1},
        "delta_steps": {"type": "integer", "minimum": 0},
        "eta0": NUM,
        "b": FN_PRESET,
        "sigma": FN_PRESET,
        "h": H_PRESET,
        "generator": GEN_PRESET,
        "phi0": FN_PRESET,
        "psi0": FN_PRESET,
        "n_paths": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0},
        "method": {"enum": ["cholesky", "hosking"]},
        "solver": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "route": {"enum": ["picard", "pde"]},
                "tol": NUM,
                "max_iter": {"type": "integer", "minimum": 1},
                "basis_degree": {"type": "integer", "minimum": 1, "maximum": 6},
                "mode": {"enum": ["existence", "comparison"]},
                "beta": NUM,
                "M": NUM,
                "J": {"type": "integer", "minimum": 10},
            },
        },
        "comparison": {
            "type": "object", "additionalProperties": False,
            "required": ["generator"],
            "properties": {"h": H_PRESET, "generator": GEN_PRESET, "phi0": FN_PRESET, "psi0": FN_PRESET},
        },
        "diagnostics": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "isometry_battery": {"type": "integer", "minimum": 0},
                "product_cases": {"type": "boolean"},
                "apriori_betas": {"type": "array", "items": NUM},
                "apriori_M": NUM,
            },
        },
        "checks": {"type": "array", "items": {"enum": [
            "y0_equals_eta0", "quadratic_closed_form", "linear_closed_form", "one_pass",
            "delay_closed_form", "contraction", "dominance", "isometry", "product", "apriori",
        ]}},
        "outputs": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "emit_paths": {"type": "boolean"},
                "emit_fields": {"type": "boolean"},
                "trace_timings": {"type": "boolean"},
            },
        },
    },
}

DEFAULTS = {
    "H": "0.75", "T": "1", "N": 128, "delta_steps": 0, "eta0": "0",
    "b": "0", "sigma": "1", "h": "id", "generator": "zero", "phi0": "0", "psi0": "0",
    "n_paths": 10000, "seed": 20240601, "method": "cholesky",
    "solver": {"route": "picard", "tol": "1e-6", "max_iter": 50, "basis_degree": 2,
               "mode": "existence", "J": 400},
    "diagnostics": {"isometry_battery": 0, "product_cases": False,
                    "apriori_betas": ["1", "2"], "apriori_M": "2.5"},
    "checks": ["apriori"],
    "outputs": {"dir": "out", "emit_paths": False, "emit_fields": False, "trace_timings": False},
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


def num(v) -> float:
    """Decimal string or JSON number to binary64."""
    if isinstance(v, bool):
        raise ConfigError(f"expected a number, got {v!r}")
    try:
        out = float(v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"expected a number, got {v!r}") from exc
    if not np.isfinite(out):
        raise ConfigError(f"non-finite number {v!r}")
    return out


def validate(cfg: dict) -> None:
    errors = sorted(_VALIDATOR.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {e.message}")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key not in ("generator", "h", "b", "sigma", "phi0", "psi0"):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve(cfg: dict, scenarios: dict | None = None) -> dict:
    """Validate, merge over the named scenario and the defaults, validate again."""
    validate(cfg)
    base = DEFAULTS
    name = cfg.get("scenario")
    if name is not None:
        if scenarios is None or name not in scenarios:
            raise ConfigError(f"unknown scenario {name!r}")
        base = _merge(base, scenarios[name]["config"])
    out = _merge(base, cfg)
    validate(out)
    check_ranges(out)
    return out


def check_ranges(cfg: dict) -> None:
    H = num(cfg["H"])
    if not 0.5 < H < 1:
        raise ConfigError(f"H must lie in (1/2, 1), got {H!r}")
    if not num(cfg["T"]) > 0:
        raise ConfigError("T must be > 0")
    if cfg["delta_steps"] > cfg["N"]:
        raise ConfigError("delta_steps must not exceed N")
    s = cfg["solver"]
    if not num(s["tol"]) > 0:
        raise ConfigError("solver.tol must be > 0")
    if "M" in s and not num(s["M"]) > 2:
        raise ConfigError("solver.M must exceed 2")
    if "beta" in s and not num(s["beta"]) > 0:
        raise ConfigError("solver.beta must be > 0")
    if not num(cfg["diagnostics"]["apriori_M"]) > 2:
        raise ConfigError("diagnostics.apriori_M must exceed 2")
    for b in cfg["diagnostics"]["apriori_betas"]:
        if not num(b) > 0:
            raise ConfigError("apriori betas must be > 0")


def canonical(cfg: dict) -> bytes:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()


def content_hash(cfg: dict) -> str:
    """git blob hash of the canonical config bytes."""
    data = canonical(cfg)
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


# ---------------------------------------------------------------- builders

def build_fn(spec, role: str = "test") -> DeterministicFn:
    if isinstance(spec, dict):
        if "const" in spec:
            return DeterministicFn.constant(num(spec["const"]), role)
        a, c = (num(v) for v in spec["affine"])
        return DeterministicFn.affine(a, c, role)
    return DeterministicFn.constant(num(spec), role)


def build_terminal(spec) -> TerminalMap:
    if spec == "id":
        return TerminalMap.identity()
    if spec == "square":
        return TerminalMap.square()
    if spec == "cos":
        return TerminalMap.cosine()
    if "call" in spec:
        return TerminalMap.call(num(spec["call"]))
    a, c = (num(v) for v in spec["affine"])
    return TerminalMap.affine(a, c)


def build_generator(spec, H: float) -> GeneratorSpec:
    if spec == "zero":
        return GeneratorSpec.zero()
    if spec == "example43_minus":
        return GeneratorSpec.example_pair_member(H, -1.0)
    if spec == "example43_plus":
        return GeneratorSpec.example_pair_member(H, 1.0)
    if "table" in spec:
        return table_generator(spec["table"])
    if "const" in spec:
        g = GeneratorSpec.constant(num(spec["const"]))
    elif "linear_delay" in spec:
        g = GeneratorSpec.linear_delay(num(spec["linear_delay"]), num(spec.get("shift", 0)))
    else:
        g = GeneratorSpec.linear_y(num(spec["linear_y"]))
    if "L" in spec:
        g = GeneratorSpec(g.f, g.uses_y, g.uses_z, g.uses_y_delay, g.uses_z_delay, num(spec["L"]),
                          g.monotone_in_y_delay, g.label)
    return g


def table_generator(tab: dict) -> GeneratorSpec:
    """Multilinear interpolation of tabulated values over the named axes (linear extrapolation outside)."""
    names = [a for a in TABLE_AXES if a in tab["axes"]]
    axes = [np.array([num(v) for v in tab["axes"][a]]) for a in names]
    for a, ax in zip(names, axes):
        if np.any(np.diff(ax) <= 0):
            raise ConfigError(f"table axis {a!r} must be strictly increasing")
    values = np.vectorize(num, otypes=[float])(np.array(tab["values"], dtype=object))
    if values.shape != tuple(len(ax) for ax in axes):
        raise ConfigError(f"table values have shape {values.shape}, axes need "
                          f"{tuple(len(ax) for ax in axes)}")
    interp = RegularGridInterpolator(axes, values, method="linear", bounds_error=False, fill_value=None)

    def f(t, x, y, z, yd, zd):
        args = dict(t=t, x=x, y=y, z=z, y_delay=yd, z_delay=zd)
        cols = np.broadcast_arrays(*[np.asarray(args[a], dtype=float) for a in names])
        shape = cols[0].shape
        return interp(np.column_stack([c.ravel() for c in cols])).reshape(shape)

    return GeneratorSpec(f, uses_y="y" in names, uses_z="z" in names, uses_y_delay="y_delay" in names,
                         uses_z_delay="z_delay" in names, L=num(tab["L"]),
                         monotone_in_y_delay=tab.get("monotone_in_y_delay"), label="table")


@dataclass(frozen=True)
class SolverSettings:
    route: str
    picard: PicardConfig
    J: int


def build_solver(cfg: dict) -> SolverSettings:
    s = cfg["solver"]
    pc = PicardConfig(
        tol=num(s["tol"]), max_iter=s["max_iter"],
        basis=RegressionBasis(degree=s["basis_degree"]),
        beta=num(s["beta"]) if "beta" in s else None,
        M=num(s["M"]) if "M" in s else None,
        mode=s["mode"],
    )
    return SolverSettings(s["route"], pc, s["J"])
