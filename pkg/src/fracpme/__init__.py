"""Spectral solvers for the fractional porous medium flow on dilating closed manifolds.

Submodules
----------
manifold     eigenpairs, transforms and norms on circles and zonal spheres
geometry     radius laws, pushforward/pullback and the divergence matrix
extension    harmonic extensions, Dirichlet-to-Neumann maps, truncation gaps
nonlinearity power laws, regularised families, validated custom maps
solver       Galerkin integration and structural diagnostics
oracles      closed-form reference solutions
harness      YAML-configured experiments and the ``fracpme`` CLI
"""
from .errors import (
    AliasingError,
    ConstructionError,
    DomainError,
    FracPMEError,
    QuadratureError,
    SnapshotMismatchError,
    StepError,
)

__version__ = "0.1.0"

__all__ = [
    "AliasingError", "ConstructionError", "DomainError", "FracPMEError",
    "QuadratureError", "SnapshotMismatchError", "StepError",
]
