"""Numerical laboratory for parabolic frequency on Gaussian space.

Mehler kernels, the Ornstein-Uhlenbeck heat flow with lower-order terms,
kernel-weighted integrals H, I and the frequency N, plus the inequality
checks built on them.
"""

from oulab.errors import (
    ConfigurationError,
    DomainError,
    EvaluationError,
    InstabilityError,
    OulabError,
)
from oulab.gaussian import (
    GaussianGrid,
    GrowthClass,
    SpectralField,
    SphericalGrid,
    build_gamma_grid,
    build_spherical_grid,
    check_growth,
    gradient,
    integrate_gamma,
    project,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DomainError",
    "EvaluationError",
    "GaussianGrid",
    "GrowthClass",
    "InstabilityError",
    "OulabError",
    "SpectralField",
    "SphericalGrid",
    "build_gamma_grid",
    "build_spherical_grid",
    "check_growth",
    "gradient",
    "integrate_gamma",
    "project",
]
