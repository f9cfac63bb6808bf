"""Pressure, invariant densities and kernel entropy for correspondences of expanding maps."""

from .correspondence import Correspondence, ExpansionConstants, coincidence_gap, expansion_constants
from .entropy import (
    fiber_entropy,
    kernel_entropy_analytic,
    partition_entropy_rate,
    variational_check,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    CorrthermError,
    ExpansionVerificationError,
    NumericError,
    PreconditionError,
    ResourceError,
)
from .kernel import CylinderSpec, Kernel, cylinder_measure, pushforward, sample_markov
from .maps import CircleLinear, CirclePerturbed, TorusLinear, generator_from_config
from .operator import GridDensity, apply_transfer, check_kernel_invariance, invariant_density
from .orbits import (
    Potential,
    build_backward_tree,
    gibbs_ratio,
    phi_n,
    pressure_separated_lower,
    pressure_spanning_upper,
    pressure_via_growth,
)

__version__ = "0.1.0"

__all__ = [
    "CircleLinear",
    "CirclePerturbed",
    "ConfigError",
    "ConvergenceError",
    "Correspondence",
    "CorrthermError",
    "CylinderSpec",
    "ExpansionConstants",
    "ExpansionVerificationError",
    "GridDensity",
    "Kernel",
    "NumericError",
    "Potential",
    "PreconditionError",
    "ResourceError",
    "TorusLinear",
    "apply_transfer",
    "build_backward_tree",
    "check_kernel_invariance",
    "coincidence_gap",
    "cylinder_measure",
    "expansion_constants",
    "fiber_entropy",
    "generator_from_config",
    "gibbs_ratio",
    "invariant_density",
    "kernel_entropy_analytic",
    "partition_entropy_rate",
    "phi_n",
    "pressure_separated_lower",
    "pressure_spanning_upper",
    "pressure_via_growth",
    "pushforward",
    "sample_markov",
    "variational_check",
]
