"""Learning Lie-Poisson dynamics with exact Poisson maps (LPNets and G-LPNets)."""

from __future__ import annotations

__version__ = "0.1.0"

from .fit import apply_row, extract_row
from .maps import pendulum_composite, particle_composite, se3_map, se3_step, so3_map
from .systems import SYSTEM_NAMES, get_system

__all__ = [
    "__version__",
    "SYSTEM_NAMES",
    "apply_row",
    "extract_row",
    "get_system",
    "pendulum_composite",
    "particle_composite",
    "se3_map",
    "se3_step",
    "so3_map",
]
