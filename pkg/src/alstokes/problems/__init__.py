"""Benchmark problems: multi-sinker Stokes flow and viscoplastic compression."""
from .sinker import SinkerConfig, place_sinkers, sinker_blocks, sinker_hierarchy_blocks
from .viscoplastic import ViscoplasticConfig, newton_solve, viscoplastic_effective_viscosity

__all__ = ["SinkerConfig", "place_sinkers", "sinker_blocks", "sinker_hierarchy_blocks",
           "ViscoplasticConfig", "newton_solve", "viscoplastic_effective_viscosity"]
