"""Numerical laboratory for fractional BSDEs with delayed generators (1/2 < H < 1)."""

from .delay_solver import (DelayedBsdeProblem, GeneratorSpec, IterationTrace, PicardConfig,
                           admissible_delay, admissible_horizon, check_monotone, inner_step,
                           solve_comparison_sequence, solve_delayed_picard)
from .fbsde_core import (SolutionEnsemble, TerminalMap, evaluate_on_paths, quasi_expectation,
                         solve_markovian_pde)
from .kernel import (DeterministicFn, FbmModel, HurstParam, KernelConstants, TimeGrid,
                     inner_product, ratio_bound, sigma_hat, sigma_norm_sq)
from .regression import RegressionBasis
from .sampler import sample_fbm, simulate_forward

__version__ = "0.1.0"
