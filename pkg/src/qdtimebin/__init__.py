"""Simulation and analysis of quantum-dot photon pairs converted from
polarization to time-bin entanglement."""

from .qmath import TwoQubitDensity, TwoQubitState, bell_state, concurrence, fidelity, werner
from .source import SourceConfig, simulate_emissions
from .interface import InterfaceConfig
from .detection import DetectorConfig, TimeTags
from .tomography import TomographyPlan, mle_reconstruct
from .config import RunConfig

__all__ = [
    "TwoQubitDensity", "TwoQubitState", "bell_state", "concurrence", "fidelity", "werner",
    "SourceConfig", "simulate_emissions", "InterfaceConfig", "DetectorConfig", "TimeTags",
    "TomographyPlan", "mle_reconstruct", "RunConfig",
]
__version__ = "0.1.0"
