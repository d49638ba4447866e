"""Stein normal approximation for the Hopfield model with random patterns."""

from .free_energy import (CenteringResult, FixedPointResult, curie_weiss_fixed_point,
                          find_lambda_max, phi, phi_gradient, phi_hessian)
from .metrics import (TestFunction, distance, fit_rate, gclass_family,
                      hubbard_stratonovich_check, smooth_family)
from .model import (CriticalPointError, ModelParams, PatternSet, SpinConfig,
                    generate_patterns, hamiltonian, overlap)
from .sampling import ChainConfig, SampleBatch, enumerate_distribution, run_chains
from .stein import SteinReport, build_regression, stein_report

__version__ = "0.1.0"

__all__ = [
    "CenteringResult", "ChainConfig", "CriticalPointError", "FixedPointResult",
    "ModelParams", "PatternSet", "SampleBatch", "SpinConfig", "SteinReport",
    "TestFunction", "build_regression", "curie_weiss_fixed_point", "distance",
    "enumerate_distribution", "find_lambda_max", "fit_rate", "gclass_family",
    "generate_patterns", "hamiltonian", "hubbard_stratonovich_check", "overlap",
    "phi", "phi_gradient", "phi_hessian", "run_chains", "smooth_family",
    "stein_report",
]
