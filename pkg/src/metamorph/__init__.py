"""Particle-based geodesic shooting for image metamorphosis in RKHS.

A template image is morphed into a target by jointly deforming it along a
smooth flow and letting its intensities evolve; both effects are carried by N
particles with vector momenta (deformation) and scalar momenta (intensity).
The package provides the forward Hamiltonian particle dynamics, exact
adjoint-based gradients of the endpoint matching energy, a conjugate-gradient
shooting optimizer, image rendering of the morph, and random-momentum image
synthesis.
"""

from . import adjoint_grad, cli, dynamics, image_field, kernels, optimizer, renderer, sampler
from .adjoint_grad import GradientReport, gradient
from .dynamics import Controls, ParticleState, SolverConfig, Trajectory, shoot
from .image_field import ScalarField
from .kernels import Family, KernelParams
from .optimizer import OptimOptions, OptimResult, OptimStatus
from .renderer import RenderConfig
from .sampler import MomentumSet

__version__ = "0.1.0"

__all__ = [
    "adjoint_grad",
    "cli",
    "dynamics",
    "image_field",
    "kernels",
    "optimizer",
    "renderer",
    "sampler",
    "Controls",
    "Family",
    "GradientReport",
    "KernelParams",
    "MomentumSet",
    "OptimOptions",
    "OptimResult",
    "OptimStatus",
    "ParticleState",
    "RenderConfig",
    "ScalarField",
    "SolverConfig",
    "Trajectory",
    "gradient",
    "shoot",
    "__version__",
]
