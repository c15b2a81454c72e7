"""First-order calculus, divergence and p-minimizers on discrete metric-measure models."""

__version__ = "0.1.0"

from .norms import NormSpec, eval_dual_norm, eval_norm, gradient_set, gradient_support
from .spaces import GraphDomain, GridDomain, Jet, make_test_functions, modulus
from .dcalc import dpm_field, dpm_pointwise, dpm_quotient_oracle, detect_hilbertianity, detect_strict_convexity
from .divergence import divergence_bounds, extract_divergence, subdifferential_witnesses
from .minimize import (
    EnergySpec,
    certify_minimizer,
    certify_subminimizer,
    certify_superminimizer,
    minimize_p_energy,
)
from .estimators import DivergenceExtractor, PEnergyMinimizer

__all__ = [
    "NormSpec", "eval_norm", "eval_dual_norm", "gradient_set", "gradient_support",
    "GridDomain", "GraphDomain", "Jet", "make_test_functions", "modulus",
    "dpm_pointwise", "dpm_quotient_oracle", "dpm_field", "detect_strict_convexity", "detect_hilbertianity",
    "divergence_bounds", "extract_divergence", "subdifferential_witnesses",
    "EnergySpec", "minimize_p_energy", "certify_minimizer", "certify_superminimizer", "certify_subminimizer",
    "PEnergyMinimizer", "DivergenceExtractor",
]
