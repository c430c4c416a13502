"""Built-in scenario library (desk scale: N = 128, 10^4 paths)."""

from __future__ import annotations

SCENARIOS = {
    "zero_generator": {
        "description": "f = 0, h = id: Y_0 equals eta_0",
        "config": {"eta0": "0.5", "generator": "zero", "h": "id",
                   "checks": ["y0_equals_eta0", "apriori"]},
    },
    "quadratic_terminal": {
        "description": "h(x) = x^2 by the PDE route: u(0, 0) = T^(2H)",
        "config": {"h": "square", "solver": {"route": "pde", "J": 400},
                   "checks": ["quadratic_closed_form", "apriori"]},
    },
    "linear_y": {
        "description": "f = a y: Y_t = e^(a(T-t)) eta_t",
        "config": {"eta0": "1", "generator": {"linear_y": "1"}, "h": "id",
                   "checks": ["linear_closed_form", "apriori"]},
    },
    "delay_ge_T": {
        "description": "delta = T, f = y_delay, phi0 = 1: one Picard pass, Y_t = eta_t + T - t",
        "config": {"T": "0.5", "N": 128, "delta_steps": 128, "generator": {"linear_delay": "1"},
                   "phi0": "1", "h": "id", "checks": ["one_pass", "delay_closed_form", "apriori"]},
    },
    "certified_contraction": {
        "description": "f = y_delay/2 with delta near delta_max/2 (L = 0.5, M = 2.5): ratios <= 1/2",
        "config": {"eta0": "1", "delta_steps": 7, "generator": {"linear_delay": "0.5", "L": "0.5"},
                   "h": "id", "solver": {"M": "2.5", "tol": "1e-12"},
                   "checks": ["contraction", "apriori"]},
    },
    "example43": {
        "description": "comparison pair y + t^(2H-1) z + y_delay -/+ 1 with ordered data: Y1 <= Y2",
        "config": {"T": "0.5", "delta_steps": 1, "generator": "example43_minus", "h": "id", "phi0": "0",
                   "solver": {"M": "2.5", "mode": "comparison"},
                   "comparison": {"generator": "example43_plus", "h": {"affine": ["0.1", "1"]},
                                  "phi0": "0.1", "psi0": "0"},
                   "checks": ["dominance", "apriori"]},
    },
    "h_degeneration_051": {
        "description": "H = 0.51 linear scenario against the classical closed form",
        "config": {"H": "0.51", "eta0": "1", "generator": {"linear_y": "1"}, "h": "id",
                   "checks": ["linear_closed_form", "apriori"]},
    },
    "isometry_battery": {
        "description": "zero-generator solve plus a 100-function divergence-isometry battery",
        "config": {"generator": "zero", "h": "id", "diagnostics": {"isometry_battery": 100},
                   "checks": ["isometry", "apriori"]},
    },
    "product_identity": {
        "description": "E[X1 X2] against the product-rule correction on the three deterministic cases",
        "config": {"generator": "zero", "h": "id", "diagnostics": {"product_cases": True},
                   "checks": ["product", "apriori"]},
    },
}


def list_scenarios():
    return [(name, s["description"]) for name, s in SCENARIOS.items()]
