"""Boundary null control of a heat equation with an interior point mass.

Modules: ``spectrum`` (eigenpairs), ``state`` (grid states and modal
evolution), ``moment`` (control synthesis), ``pde`` (finite-difference
oracle), ``verify`` (duality and end-to-end checks) and ``cli``.
"""
from .spectrum import BoundaryCase, EigenPair, eigenpair, eigenpairs
from .state import HybridState, SpectralCoeffs
from .moment import ControlSignal, MomentSystem, Weight
from .pde import FdConfig, Trajectory

__version__ = "0.1.0"

__all__ = [
    "BoundaryCase",
    "EigenPair",
    "eigenpair",
    "eigenpairs",
    "HybridState",
    "SpectralCoeffs",
    "ControlSignal",
    "MomentSystem",
    "Weight",
    "FdConfig",
    "Trajectory",
]
