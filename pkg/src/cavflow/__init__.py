"""
Incompressible round-cavity deformations of a disk built from a
volume-preserving flow on the region far from the cavities.

Modules
-------
geometry   configurations, attainability, evolutions of holes
neumann    Neumann problems on disks with circular holes
velocity   divergence-free growth and translation fields
flow       RK4 transport of points and deformation gradients
cavity     near-cavity maps, energies, cavity shape diagnostics
cli        the ``cavflow`` command
"""
__version__ = "0.1.0"

from .geometry import (  # noqa: E402
    CavitationConfig,
    ConfigError,
    Evolution,
    HoleDomain,
    NotAttainableError,
    build_evolution,
    check_attainable,
    compute_lambda,
    domain_at,
    sigma,
)
from .neumann import NeumannData, SolverOptions, solve_neumann  # noqa: E402
from .velocity import build_velocity_field  # noqa: E402
from .flow import FlowOptions, integrate_flow  # noqa: E402
from .cavity import CavitationMap, energy_sweep, fraenkel_asymmetry  # noqa: E402

__all__ = [
    "__version__",
    "CavitationConfig",
    "ConfigError",
    "Evolution",
    "HoleDomain",
    "NotAttainableError",
    "build_evolution",
    "check_attainable",
    "compute_lambda",
    "domain_at",
    "sigma",
    "NeumannData",
    "SolverOptions",
    "solve_neumann",
    "build_velocity_field",
    "FlowOptions",
    "integrate_flow",
    "CavitationMap",
    "energy_sweep",
    "fraenkel_asymmetry",
]
