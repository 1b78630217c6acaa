"""Monte-Carlo toolkit for homogeneous fragmentations, stopping lines,
characteristics, immigration and spine decompositions."""

from .measure import (
    DislocationMeasure,
    HypothesisError,
    RankedMassVector,
    malthusian,
    pbar,
    phi,
    phi_prime,
    rho_pairing,
    structural_constants,
)
from .functions import TestFunction, parse_test_function
from .fragcore import SimulationParams, simulate, simulate_many
from .stats import MCParams

__version__ = "0.1.0"

__all__ = [
    "DislocationMeasure",
    "HypothesisError",
    "MCParams",
    "RankedMassVector",
    "SimulationParams",
    "TestFunction",
    "malthusian",
    "parse_test_function",
    "pbar",
    "phi",
    "phi_prime",
    "rho_pairing",
    "simulate",
    "simulate_many",
    "structural_constants",
]
