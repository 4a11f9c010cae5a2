"""Areal-gauge evolution of T²-symmetric vacuum Einstein flows and their asymptotic diagnostics."""

__version__ = "0.1.0"

from .fields import FieldState, PeriodicGrid, UsageError  # noqa: E402
from .initial_data import SamplerSpec, make_initial_data  # noqa: E402
from .evolution import EvolutionConfig, EvolutionError, evolve  # noqa: E402
from .diagnostics import compute_record  # noqa: E402

__all__ = [
    "FieldState",
    "PeriodicGrid",
    "UsageError",
    "SamplerSpec",
    "make_initial_data",
    "EvolutionConfig",
    "EvolutionError",
    "evolve",
    "compute_record",
]
