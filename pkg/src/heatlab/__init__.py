"""Random walks in symmetric elliptic environments on Z^d: exact kernels,
Green functions, adjoint solutions and empirical checks of heat-kernel
estimates."""
__version__ = "0.1.0"

from .environment import Environment, EnvironmentSpec, InvalidEnvironment, SpecError, build, generate, validate
from .kernel import KilledWalk, MassField, ResourceLimitError, budget, kernel_row, killed_kernel, step
from .lattice import Ball, Box, Cylinder, Domain

__all__ = [
    "__version__", "Environment", "EnvironmentSpec", "InvalidEnvironment", "SpecError", "build", "generate",
    "validate", "KilledWalk", "MassField", "ResourceLimitError", "budget", "kernel_row", "killed_kernel", "step",
    "Ball", "Box", "Cylinder", "Domain",
]
