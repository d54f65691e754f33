"""
polypin - Directed polymers in a random-sign pinning potential
"""

__version__ = "0.1.0"

from .config_parser import config_parser
from .environment import Environment, sample_environment, shift
from .gibbs import marginal_at, pinned_approximant_marginal, sample_path
from .lattice_potential import PotentialSpec, Window, check_conditions
from .spectral import pullback_eigenfunction
from .transfer import Field, apply_transfer_range, log_partition_function

__all__ = [
    "Environment",
    "Field",
    "PotentialSpec",
    "Window",
    "apply_transfer_range",
    "check_conditions",
    "config_parser",
    "log_partition_function",
    "marginal_at",
    "pinned_approximant_marginal",
    "pullback_eigenfunction",
    "sample_environment",
    "sample_path",
    "shift",
]
